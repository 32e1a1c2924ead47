# app/analysis/warp.py
# =============================================================================
# Warp / reconstruction (RULES ONLY)
# -----------------------------------------------------------------------------
# Shift convention (ใช้ทั้ง repo, ห้าม derive ใหม่ที่อื่น):
#   left pixel x  <->  right pixel x − d
#   - สร้าง view ซ้ายจากขวา  : sample ภาพขวาที่ x − d   (view="left")
#   - สร้าง view ขวาจากซ้าย  : sample ภาพซ้ายที่ x + d   (view="right")
# =============================================================================
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from app.core import Tensor, ops
from app.analysis.disparity import (
    CameraRig,
    DisparityLevels,
    DisparityRangeError,
    LevelsError,
    level_values,
)

__all__ = [
    "LEFT",
    "RIGHT",
    "NormalizationError",
    "ReconstructedImage",
    "sample_sign",
    "sample_offsets",
    "shift_volume",
    "shift_image_stack",
    "discrete_reconstruct",
    "continuous_reconstruct",
    "in_view",
]

LEFT = "left"
RIGHT = "right"
_SIGN = {LEFT: -1.0, RIGHT: 1.0}

LevelsLike = Union[DisparityLevels, Sequence[float], np.ndarray]


class NormalizationError(ValueError):
    """Probability volume whose channel sums deviate from 1."""


@dataclass(frozen=True)
class ReconstructedImage:
    img: Tensor
    validity: np.ndarray  # (B, 1, H, W) float {0,1}: sampled coordinate inside [0, W-1]


def sample_sign(view: str) -> float:
    """+1/−1 multiplier turning a disparity into a sampling offset for `view`."""
    if view not in _SIGN:
        raise ValueError(f"view must be '{LEFT}' or '{RIGHT}', got {view!r}")
    return _SIGN[view]


def sample_offsets(disparities: np.ndarray, view: str = LEFT) -> np.ndarray:
    return sample_sign(view) * np.asarray(disparities, dtype=np.float64)


def in_view(disparity: np.ndarray, view: str = LEFT) -> np.ndarray:
    """1 where x + offset(d) stays inside [0, W-1] (last axis is W)."""
    W = disparity.shape[-1]
    x = np.arange(W, dtype=np.float64)
    src = x + sample_sign(view) * disparity
    return ((src >= 0) & (src <= W - 1)).astype(np.float64)


# =============================================================================
# Discrete depth constraint (volume / image shifting)
# =============================================================================
def shift_volume(v: Tensor, levels: LevelsLike, view: str = LEFT, scale: float = 1.0) -> Tensor:
    """Channel n of (B, N, H, W) resampled at column x ∓ scale·b_n."""
    b = level_values(levels)
    if v.ndim != 4 or v.shape[1] != b.size:
        raise LevelsError(f"volume of shape {v.shape} does not carry {b.size} level channels")
    return ops.shift_channels(v, sample_offsets(b * scale, view))


def shift_image_stack(img: Tensor, levels: LevelsLike, view: str = LEFT) -> Tensor:
    """(B, C, H, W) -> (B, N, C, H, W), copy n shifted by level b_n."""
    return ops.shift_stack(img, sample_offsets(level_values(levels), view))


def _check_normalized(p: Tensor, tol: float = 1e-4) -> None:
    dev = np.abs(p.data.sum(axis=1) - 1.0)
    if dev.size and dev.max() > tol:
        raise NormalizationError(f"probability volume channel sums deviate from 1 by up to {dev.max():.3g}")


def discrete_reconstruct(
    p_hat: Tensor,
    source: Tensor,
    levels: LevelsLike,
    view: str = LEFT,
) -> ReconstructedImage:
    """Σ_n P̂_n ⊙ shift(source, b_n): rebuild `view` from the other view's image."""
    b = level_values(levels)
    if p_hat.ndim != 4 or p_hat.shape[1] != b.size:
        raise LevelsError(f"volume of shape {p_hat.shape} does not carry {b.size} level channels")
    if p_hat.shape[0] != source.shape[0] or p_hat.shape[2:] != source.shape[2:]:
        raise LevelsError(f"volume {p_hat.shape} and image {source.shape} disagree in batch/spatial size")
    _check_normalized(p_hat)
    B, N, H, W = p_hat.shape
    shifted = shift_image_stack(source, b, view)
    weights = ops.reshape(p_hat, (B, N, 1, H, W))
    img = ops.sum(ops.mul(shifted, weights), axis=1)
    expected = (p_hat.data * b.reshape(1, -1, 1, 1)).sum(axis=1, keepdims=True)
    return ReconstructedImage(img=img, validity=in_view(expected, view))


# =============================================================================
# Continuous depth constraint
# =============================================================================
def continuous_reconstruct(
    source: Tensor,
    depth: Tensor,
    rig: CameraRig,
    view: str = LEFT,
) -> ReconstructedImage:
    """output(p) = ⟨source, p ∓ [B·f_x / D(p), 0]⟩, differentiable w.r.t. depth and source."""
    if not np.all(depth.data > 0):
        raise DisparityRangeError(f"depth must be > 0 everywhere, got min {depth.data.min()}")
    B, _, H, W = source.shape
    if depth.shape != (B, 1, H, W):
        raise LevelsError(f"depth map {depth.shape} does not match image {source.shape}")
    disp = ops.reshape(ops.div(rig.bf, depth), (B, H, W))
    ys, xs = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    base_x = np.broadcast_to(xs, (B, H, W)).astype(source.dtype)
    base_y = np.broadcast_to(ys, (B, H, W)).astype(source.dtype)
    x = ops.add(base_x, ops.mul(sample_sign(view), disp))
    img = ops.bilinear_sample(source, x, base_y)
    return ReconstructedImage(img=img, validity=in_view(disp.data[:, None], view))

