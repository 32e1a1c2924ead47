# app/services/augment.py
# =============================================================================
# Stereo-pair augmentation
# -----------------------------------------------------------------------------
# - resize ทั้งสอง view + GT disparity ด้วย scale s (ค่า disparity × s)
# - random crop ขนาด train
# - horizontal flip = สลับซ้าย/ขวา + mirror (เรขาคณิตยังถูกต้อง)
# - brightness/contrast ต่อ channel ใช้ค่าเดียวกันทั้งสอง view
# =============================================================================
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from app.analysis.masks import occlusion_mask, out_of_view_mask
from app.schemas.sample import StereoSample

__all__ = ["CropError", "AugmentParams", "sample_params", "apply_augment", "augment", "flip_pair"]


class CropError(ValueError):
    """Requested crop does not fit inside the (scaled) sample."""


@dataclass(frozen=True)
class AugmentParams:
    scale: float = 1.0
    flip: bool = False
    crop_y: int = 0
    crop_x: int = 0
    brightness: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    contrast: Tuple[float, float, float] = (1.0, 1.0, 1.0)


def _scaled_size(h: int, w: int, s: float) -> Tuple[int, int]:
    return int(round(h * s)), int(round(w * s))


def sample_params(
    sample: StereoSample,
    rng: np.random.Generator,
    crop_hw: Tuple[int, int],
    scale_range: Tuple[float, float] = (0.67, 1.5),
    flip_prob: float = 0.5,
    jitter: float = 0.1,
) -> AugmentParams:
    """Draw parameters; the scale floor is raised so that the crop always fits."""
    H, W = sample.height, sample.width
    ch, cw = crop_hw
    lo, hi = scale_range
    lo = max(lo, ch / H, cw / W)
    if lo > hi:
        raise CropError(f"crop {crop_hw} does not fit a {H}x{W} sample within scale range {scale_range}")
    s = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    sh, sw = _scaled_size(H, W, s)
    # rounding can fall one pixel short of the crop
    while sh < ch or sw < cw:
        s += 1.0 / max(H, W)
        sh, sw = _scaled_size(H, W, s)
    flip = bool(rng.random() < flip_prob)
    cy = int(rng.integers(0, sh - ch + 1))
    cx = int(rng.integers(0, sw - cw + 1))
    brightness = tuple(float(v) for v in rng.uniform(-jitter, jitter, size=3))
    contrast = tuple(float(v) for v in rng.uniform(1.0 - jitter, 1.0 + jitter, size=3))
    return AugmentParams(scale=s, flip=flip, crop_y=cy, crop_x=cx, brightness=brightness, contrast=contrast)


def _resize(arr: np.ndarray, size: Tuple[int, int], order: int) -> np.ndarray:
    if arr.shape[-2:] == size:
        return arr.copy()
    factors = (1.0, size[0] / arr.shape[-2], size[1] / arr.shape[-1])
    out = ndimage.zoom(arr, factors, order=order, mode="nearest", grid_mode=True)
    return out[:, : size[0], : size[1]]


def _mirror(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr[..., ::-1])


def _validity(d: np.ndarray) -> np.ndarray:
    return occlusion_mask(d) * (1.0 - out_of_view_mask(d))


def flip_pair(sample: StereoSample) -> StereoSample:
    """Mirror both views and swap their roles; the right-view ground truth becomes the left one."""
    d_left = _mirror(sample.disparity_right)
    return sample.with_arrays(
        left=_mirror(sample.right),
        right=_mirror(sample.left),
        disparity=d_left,
        disparity_right=_mirror(sample.disparity),
        validity=_validity(d_left),
    )


def apply_augment(sample: StereoSample, params: AugmentParams, crop_hw: Optional[Tuple[int, int]] = None) -> StereoSample:
    H, W = sample.height, sample.width
    ch, cw = crop_hw if crop_hw is not None else (H, W)
    sh, sw = _scaled_size(H, W, params.scale)
    if ch > sh or cw > sw:
        raise CropError(f"crop {ch}x{cw} larger than scaled sample {sh}x{sw}")
    if not (0 <= params.crop_y <= sh - ch and 0 <= params.crop_x <= sw - cw):
        raise CropError(f"crop origin ({params.crop_y}, {params.crop_x}) outside the scaled sample {sh}x{sw}")

    out = flip_pair(sample) if params.flip else sample
    left = _resize(out.left, (sh, sw), order=1)
    right = _resize(out.right, (sh, sw), order=1)
    d = _resize(out.disparity, (sh, sw), order=0) * params.scale
    d_r = _resize(out.disparity_right, (sh, sw), order=0) * params.scale

    ys = slice(params.crop_y, params.crop_y + ch)
    xs = slice(params.crop_x, params.crop_x + cw)
    left, right = left[:, ys, xs], right[:, ys, xs]
    d, d_r = d[:, ys, xs], d_r[:, ys, xs]

    b = np.asarray(params.brightness).reshape(3, 1, 1)
    c = np.asarray(params.contrast).reshape(3, 1, 1)
    if np.any(b != 0) or np.any(c != 1):
        left = np.clip((left - 0.5) * c + 0.5 + b, 0.0, 1.0)
        right = np.clip((right - 0.5) * c + 0.5 + b, 0.0, 1.0)

    if params.scale == 1.0 and (ch, cw) == (H, W):
        validity = out.validity.copy()
    else:
        validity = _validity(d)
    return out.with_arrays(
        left=np.ascontiguousarray(left),
        right=np.ascontiguousarray(right),
        disparity=np.ascontiguousarray(d),
        disparity_right=np.ascontiguousarray(d_r),
        validity=validity,
    )


def augment(
    sample: StereoSample,
    rng: np.random.Generator,
    crop_hw: Optional[Tuple[int, int]] = None,
    scale_range: Tuple[float, float] = (0.67, 1.5),
    flip_prob: float = 0.5,
    jitter: float = 0.1,
) -> StereoSample:
    crop = crop_hw if crop_hw is not None else (sample.height, sample.width)
    params = sample_params(sample, rng, crop, scale_range, flip_prob, jitter)
    return apply_augment(sample, params, crop)
