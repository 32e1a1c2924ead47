# app/analysis/masks.py
# =============================================================================
# Occlusion / out-of-view / half-object-edge maps (RULES ONLY)
# -----------------------------------------------------------------------------
# - occlusion: ต่อ scanline จัด pixel ลง bucket ตาม round(x ∓ d)
#   ใน bucket เดียวกัน disparity มากสุดชนะ (เท่ากัน = มองเห็นทั้งหมด)
#   target หลุดภาพ = ยังถือว่ามองเห็น (ให้ M_out จัดการ)
# - round = floor(v + 0.5) (ปัดครึ่งขึ้น, deterministic)
# - mask คืนเป็น np.ndarray float รูปเดียวกับ input (แกนสุดท้าย = W)
# =============================================================================
from __future__ import annotations

from typing import Union

import numpy as np

from app.core import Tensor, no_grad, ops
from app.analysis.disparity import DisparityRangeError
from app.analysis.warp import LEFT, RIGHT, in_view, sample_sign

__all__ = [
    "LAPLACIAN_4",
    "bucket_targets",
    "occlusion_mask",
    "opposite_occlusion_mask",
    "out_of_view_mask",
    "half_object_edge_map",
]

MapLike = Union[Tensor, np.ndarray]

LAPLACIAN_4 = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def _as_array(d: MapLike) -> np.ndarray:
    arr = d.data if isinstance(d, Tensor) else np.asarray(d, dtype=np.float64)
    if arr.ndim < 1:
        raise ValueError("disparity map needs at least one (width) axis")
    if arr.size and np.any(arr < 0):
        raise DisparityRangeError(f"disparity must be >= 0, got min {arr.min()}")
    return arr


def bucket_targets(d: np.ndarray, view: str = LEFT) -> np.ndarray:
    """Rounded target column per pixel (int64, same shape as d)."""
    W = d.shape[-1]
    x = np.arange(W, dtype=np.float64)
    return np.floor(x + sample_sign(view) * d + 0.5).astype(np.int64)


def _visibility(d: np.ndarray, view: str) -> np.ndarray:
    W = d.shape[-1]
    rows = d.reshape(-1, W).astype(np.float64)
    R = rows.shape[0]
    target = bucket_targets(rows, view)
    inside = (target >= 0) & (target < W)

    # z-buffer ต่อ (row, target column): disparity มากสุดใน bucket
    flat_target = (np.arange(R)[:, None] * W + target)[inside]
    zbuf = np.full(R * W, -np.inf)
    np.maximum.at(zbuf, flat_target, rows[inside])

    visible = np.ones_like(rows)
    winner = zbuf[flat_target]
    visible[inside] = (rows[inside] >= winner).astype(np.float64)
    return visible.reshape(d.shape)


# =============================================================================
# Operations
# =============================================================================
def occlusion_mask(d: MapLike) -> np.ndarray:
    """0 at left-view pixels hidden in the right view by nearer content, else 1."""
    return _visibility(_as_array(d), LEFT)


def opposite_occlusion_mask(d: MapLike) -> np.ndarray:
    """Left disparity treated as a right-view map (targets x + d)."""
    return _visibility(_as_array(d), RIGHT)


def out_of_view_mask(d: MapLike, view: str = LEFT) -> np.ndarray:
    """1 where x − d(x) falls outside [0, W−1]."""
    return 1.0 - in_view(_as_array(d), view)


def half_object_edge_map(depth: MapLike, m_occ_opp: MapLike, t2: float) -> np.ndarray:
    """
    M_hoe = M_occ' ⊙ min(maxpool3x3(|k * D|) / t2, 1)

    k = 4-neighbour Laplacian on an edge-replicated border; depth is (B, 1, H, W).
    """
    if t2 <= 0:
        raise ValueError(f"t2 must be > 0, got {t2}")
    D = depth.data if isinstance(depth, Tensor) else np.asarray(depth, dtype=np.float64)
    gate = m_occ_opp.data if isinstance(m_occ_opp, Tensor) else np.asarray(m_occ_opp, dtype=np.float64)
    if D.ndim != 4 or D.shape[1] != 1:
        raise ValueError(f"depth map must be (B, 1, H, W), got {D.shape}")
    if gate.shape != D.shape:
        raise ValueError(f"mask {gate.shape} does not match depth {D.shape}")
    with no_grad():
        kernel = Tensor(LAPLACIAN_4.reshape(1, 1, 3, 3).astype(D.dtype))
        response = ops.conv2d(ops.pad2d(Tensor(D), 1, "edge"), kernel)
        edges = ops.maxpool3x3_stride1(ops.absolute(response))
        strength = ops.minimum_scalar(ops.div(edges, t2), 1.0)
    return gate * strength.data
