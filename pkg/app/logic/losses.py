# app/logic/losses.py
# =============================================================================
# LAYER: LOGIC / training objectives
# -----------------------------------------------------------------------------
# ใช้ rule จาก app.analysis.* (warp / masks) โดยไม่แก้กฎ
# - step 1: L_M  = L_rec1 + λ1·L_smo1
# - step 2: L_S  = L_rec2 + λ2·L_smo2 + λ3·L_cos + λ4·L_gui
# - step 3: L_dis = KL(P_h ‖ P_m)
# teacher tensors (P_a, d_a, P_h) ถูก detach ภายในฟังก์ชันเสมอ
# =============================================================================
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core import ShapeMismatchError, Tensor, ops
from app.analysis.warp import NormalizationError

__all__ = [
    "LossWeights",
    "FeatureExtractor",
    "ssim",
    "ssim_map",
    "mono_reconstruction_loss",
    "smoothness_loss",
    "composite_target",
    "stereo_reconstruction_loss",
    "cost_volume_loss",
    "guidance_loss",
    "stereo_total",
    "hybrid_volume",
    "distill_loss",
    "mono_total",
    "resample_volume",
]

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
KL_FLOOR = 1e-8

MaskLike = Union[Tensor, np.ndarray, float]


# =============================================================================
# Weights
# =============================================================================
@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.0008  # L_smo1
    lambda2: float = 0.008   # L_smo2
    lambda3: float = 0.01    # L_cos
    lambda4: float = 0.01    # L_gui
    alpha: float = 0.15      # L1 / SSIM balance
    beta: float = 0.01       # perceptual
    gamma: float = 2.0       # edge sharpness
    t1: float = 1.0          # cost-volume hinge
    t2: float = 0.13         # edge threshold

    def __post_init__(self) -> None:
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "beta", "gamma", "t1", "t2"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {getattr(self, name)}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


# =============================================================================
# Fixed feature pyramid (perceptual term)
# =============================================================================
class FeatureExtractor:
    """
    Three frozen conv stages (3×3 conv + ELU + 2×2 avg-pool) giving features at
    strides 2, 4 and 8. Weights come from a seeded generator and never train.
    """

    def __init__(self, seed: int = 0, widths: Tuple[int, int, int] = (8, 16, 32), in_channels: int = 3) -> None:
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.stages: List[Tuple[np.ndarray, np.ndarray]] = []
        c_in = in_channels
        for c_out in widths:
            std = np.sqrt(2.0 / (c_in * 9))
            self.stages.append((rng.normal(0.0, std, size=(c_out, c_in, 3, 3)), np.zeros(c_out)))
            c_in = c_out

    def __call__(self, img: Tensor) -> List[Tensor]:
        feats = []
        x = img
        for w, b in self.stages:
            conv = ops.conv2d(x, Tensor(w.astype(img.dtype)), Tensor(b.astype(img.dtype)), padding=1)
            x = ops.avg_pool2d(ops.elu(conv), 2)
            feats.append(x)
        return feats


# =============================================================================
# Building blocks
# =============================================================================
def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{what}: shapes {a.shape} and {b.shape} differ")


def _mean_abs(a: Tensor, b: Tensor) -> Tensor:
    return ops.mean(ops.absolute(ops.sub(a, b)))


def ssim_map(a: Tensor, b: Tensor) -> Tensor:
    """Per-pixel (1 − SSIM)/2 with 3×3 mean statistics, clamped to [0, 1]."""
    _check_same(a, b, "ssim")
    mu_a = ops.avg_pool3x3(a)
    mu_b = ops.avg_pool3x3(b)
    sigma_a = ops.sub(ops.avg_pool3x3(ops.mul(a, a)), ops.mul(mu_a, mu_a))
    sigma_b = ops.sub(ops.avg_pool3x3(ops.mul(b, b)), ops.mul(mu_b, mu_b))
    sigma_ab = ops.sub(ops.avg_pool3x3(ops.mul(a, b)), ops.mul(mu_a, mu_b))

    num = ops.mul(
        ops.add(ops.mul(2.0, ops.mul(mu_a, mu_b)), SSIM_C1),
        ops.add(ops.mul(2.0, sigma_ab), SSIM_C2),
    )
    den = ops.mul(
        ops.add(ops.add(ops.mul(mu_a, mu_a), ops.mul(mu_b, mu_b)), SSIM_C1),
        ops.add(ops.add(sigma_a, sigma_b), SSIM_C2),
    )
    return ops.clamp(ops.mul(ops.sub(1.0, ops.div(num, den)), 0.5), 0.0, 1.0)


def ssim(a: Tensor, b: Tensor) -> Tensor:
    return ops.mean(ssim_map(a, b))


def mono_reconstruction_loss(recon: Tensor, target: Tensor, extractor: FeatureExtractor, beta: float) -> Tensor:
    """L_rec1 = mean|Î − I| + β·Σ_i mean‖φ_i(Î) − φ_i(I)‖₂"""
    _check_same(recon, target, "mono_reconstruction_loss")
    loss = _mean_abs(recon, target)
    if beta == 0:
        return loss
    for f_rec, f_tgt in zip(extractor(recon), extractor(target)):
        diff = ops.channel_l2_norm(ops.sub(f_rec, f_tgt), axis=1)
        loss = ops.add(loss, ops.mul(beta, ops.mean(diff)))
    return loss


def _dx(t: Tensor) -> Tensor:
    return ops.sub(t[..., :-1, 1:], t[..., :-1, :-1])


def _dy(t: Tensor) -> Tensor:
    return ops.sub(t[..., 1:, :-1], t[..., :-1, :-1])


def smoothness_loss(disp: Tensor, img: Tensor, gamma: float) -> Tensor:
    """
    Edge-aware smoothness: mean(|∂x d|·e^{−γ|∂x I|} + |∂y d|·e^{−γ|∂y I|}).
    Forward differences; the last row and column are excluded.
    """
    grad_img_x = ops.mean(ops.absolute(_dx(img)), axis=1, keepdims=True)
    grad_img_y = ops.mean(ops.absolute(_dy(img)), axis=1, keepdims=True)
    wx = ops.exp(ops.mul(-gamma, grad_img_x))
    wy = ops.exp(ops.mul(-gamma, grad_img_y))
    term_x = ops.mul(ops.absolute(_dx(disp)), wx)
    term_y = ops.mul(ops.absolute(_dy(disp)), wy)
    return ops.mean(ops.add(term_x, term_y))


def _mask(m: MaskLike, like: Tensor) -> Tensor:
    if isinstance(m, Tensor):
        return m.detach()
    return Tensor(np.asarray(m, dtype=like.dtype))


def composite_target(left: Tensor, warped_aux: Tensor, m_occ: MaskLike) -> Tensor:
    """I' = M_occ ⊙ I_l + (1 − M_occ) ⊙ Ĩ_a"""
    _check_same(left, warped_aux, "composite_target")
    m = _mask(m_occ, left)
    return ops.add(ops.mul(m, left), ops.mul(ops.sub(1.0, m), warped_aux))


def stereo_reconstruction_loss(recon: Tensor, target: Tensor, alpha: float) -> Tensor:
    """L_rec2 = α·mean|Ĩ_s − I'| + (1−α)·ssim(Ĩ_s, I')"""
    _check_same(recon, target, "stereo_reconstruction_loss")
    l1 = _mean_abs(recon, target)
    if alpha >= 1.0:
        return l1
    return ops.add(ops.mul(alpha, l1), ops.mul(1.0 - alpha, ssim(recon, target)))


def resample_volume(p: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resample of (B, N, H, W) at pixel centres of a (height, width) grid."""
    B, N, H, W = p.shape
    sy, sx = H / height, W / width
    ys = (np.arange(height) + 0.5) * sy - 0.5
    xs = (np.arange(width) + 0.5) * sx - 0.5
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    gx = np.broadcast_to(gx, (B, height, width))
    gy = np.broadcast_to(gy, (B, height, width))
    return ops.bilinear_sample(Tensor(p), gx, gy).data


def cost_volume_loss(volumes: Sequence[Tensor], p_aux: Union[Tensor, np.ndarray], t1: float) -> Tensor:
    """
    L_cos = Σ_i (1/Ω_i) Σ_{x selected} ‖A_i(x) − ⟨P_a⟩(x)‖₁,
    selected = channel-summed L1 above t1, Ω_i = number of selected coordinates.
    """
    if not volumes:
        raise ValueError("cost_volume_loss needs at least one cost volume")
    p = p_aux.data if isinstance(p_aux, Tensor) else np.asarray(p_aux, dtype=np.float64)
    total: Optional[Tensor] = None
    for a in volumes:
        if a.shape[:2] != p.shape[:2]:
            raise ShapeMismatchError(f"cost volume {a.shape} and P_a {p.shape} disagree in batch/levels")
        target = resample_volume(p, a.shape[2], a.shape[3]).astype(a.dtype)
        l1 = ops.sum(ops.absolute(ops.sub(a, target)), axis=1)
        selected = (l1.data > t1).astype(a.dtype)
        count = float(selected.sum())
        if count == 0:
            term = ops.mul(ops.sum(l1), 0.0)
        else:
            term = ops.div(ops.sum(ops.mul(l1, selected)), count)
        total = term if total is None else ops.add(total, term)
    return total


def guidance_loss(d_aux: Tensor, d_stereo: Tensor, m_out: MaskLike) -> Tensor:
    """
    L_gui = mean|∂x d_a − ∂x d_s| + mean|∂y d_a − ∂y d_s| + mean(M_out ⊙ |d_a − d_s|)
    """
    _check_same(d_aux, d_stereo, "guidance_loss")
    d_a = d_aux.detach()
    gx = _mean_abs(ops.sub(d_a[..., :, 1:], d_a[..., :, :-1]), ops.sub(d_stereo[..., :, 1:], d_stereo[..., :, :-1]))
    gy = _mean_abs(ops.sub(d_a[..., 1:, :], d_a[..., :-1, :]), ops.sub(d_stereo[..., 1:, :], d_stereo[..., :-1, :]))
    m = _mask(m_out, d_stereo)
    out_term = ops.mean(ops.mul(m, ops.absolute(ops.sub(d_a, d_stereo))))
    return ops.add(ops.add(gx, gy), out_term)


def _scalar(x: Union[Tensor, float]) -> Tensor:
    return x if isinstance(x, Tensor) else ops.as_tensor(float(x))


def stereo_total(
    rec2: Union[Tensor, float],
    smo2: Union[Tensor, float],
    cos: Union[Tensor, float],
    gui: Union[Tensor, float],
    weights: LossWeights = LossWeights(),
) -> Tensor:
    """L_S = L_rec2 + λ2·L_smo2 + λ3·L_cos + λ4·L_gui"""
    total = _scalar(rec2)
    for value, w in ((smo2, weights.lambda2), (cos, weights.lambda3), (gui, weights.lambda4)):
        if w == 0:
            continue
        total = ops.add(total, ops.mul(w, _scalar(value)))
    return total


def mono_total(rec1: Union[Tensor, float], smo1: Union[Tensor, float], weights: LossWeights = LossWeights()) -> Tensor:
    """L_M = L_rec1 + λ1·L_smo1"""
    return ops.add(_scalar(rec1), ops.mul(weights.lambda1, _scalar(smo1)))


# =============================================================================
# Distillation
# =============================================================================
def hybrid_volume(p_stereo: Tensor, p_aux: Tensor, m_hoe: MaskLike) -> Tensor:
    """P_h = (1 − M_hoe) ⊙ P_s + M_hoe ⊙ P_a (mask broadcast over channels)"""
    _check_same(p_stereo, p_aux, "hybrid_volume")
    m = _mask(m_hoe, p_stereo)
    return ops.add(ops.mul(ops.sub(1.0, m), p_stereo.detach()), ops.mul(m, p_aux.detach()))


def distill_loss(p_h: Tensor, p_m: Tensor) -> Tensor:
    """KL(P_h ‖ P_m) averaged over pixels; P_m floored at 1e-8, 0·ln 0 = 0."""
    if p_h.shape != p_m.shape:
        raise ShapeMismatchError(f"distill_loss: teacher {p_h.shape} vs student {p_m.shape}")
    dev = np.abs(p_h.data.sum(axis=1) - 1.0)
    if dev.size and dev.max() > 1e-4:
        raise NormalizationError(f"teacher volume channel sums deviate from 1 by up to {dev.max():.3g}")
    teacher = p_h.data
    positive = teacher > 0
    # Σ P_h ln P_h is constant w.r.t. P_m
    entropy_term = np.where(positive, teacher * np.log(np.where(positive, teacher, 1.0)), 0.0)
    cross = ops.mul(Tensor(teacher), ops.log(ops.clamp(p_m, KL_FLOOR, None)))
    per_pixel = ops.sub(entropy_term.sum(axis=1), ops.sum(cross, axis=1))
    return ops.mean(per_pixel)
