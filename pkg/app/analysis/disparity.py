# app/analysis/disparity.py
# =============================================================================
# Disparity levels / probability volume decoding (RULES ONLY)
# -----------------------------------------------------------------------------
# - make_levels: ระดับ disparity แบบ geometric (exponential) ปลายทั้งสองตรึงค่า
# - expected_disparity: d = Σ_n P_n · b_n
# - disparity_to_depth / depth_to_disparity: D = B·f_x / d
# ไม่มี state การเทรน ไม่มี I/O
# =============================================================================
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from app.core import Tensor, ops

__all__ = [
    "LevelsError",
    "DisparityRangeError",
    "DisparityLevels",
    "CameraRig",
    "make_levels",
    "expected_disparity",
    "disparity_to_depth",
    "depth_to_disparity",
    "level_values",
]

MapLike = Union[Tensor, np.ndarray]


class LevelsError(ValueError):
    """Invalid disparity levels, or a volume whose channels do not match them."""


class DisparityRangeError(ValueError):
    """Disparity or depth outside its admissible range (non-positive, negative)."""


# =============================================================================
# Types
# =============================================================================
@dataclass(frozen=True)
class DisparityLevels:
    """N disparity values in pixels at full image width, strictly increasing."""

    values: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if b.size < 2:
            raise LevelsError(f"need at least 2 levels, got {b.size}")
        if not np.all(b > 0):
            raise LevelsError(f"levels must be positive, got min {b.min()}")
        if not np.all(np.diff(b) > 0):
            raise LevelsError("levels must be strictly increasing")
        b.setflags(write=False)
        object.__setattr__(self, "values", b)

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def b_min(self) -> float:
        return float(self.values[0])

    @property
    def b_max(self) -> float:
        return float(self.values[-1])

    def scaled(self, factor: float) -> np.ndarray:
        """Levels expressed at a reduced width W' (factor = W'/W)."""
        return self.values * factor

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class CameraRig:
    baseline: float = 0.54
    focal_x: float = 100.0

    def __post_init__(self) -> None:
        if not (self.baseline > 0 and self.focal_x > 0):
            raise DisparityRangeError(
                f"rig needs baseline > 0 and focal_x > 0, got B={self.baseline}, f_x={self.focal_x}"
            )

    @property
    def bf(self) -> float:
        return self.baseline * self.focal_x


def level_values(levels: Union[DisparityLevels, Sequence[float], np.ndarray]) -> np.ndarray:
    """Raw level vector; plain arrays are accepted for degenerate shift tests."""
    if isinstance(levels, DisparityLevels):
        return levels.values
    return np.asarray(levels, dtype=np.float64).reshape(-1)


# =============================================================================
# Operations
# =============================================================================
def make_levels(b_min: float, b_max: float, n: int) -> DisparityLevels:
    if not (0 < b_min < b_max):
        raise LevelsError(f"need 0 < b_min < b_max, got b_min={b_min}, b_max={b_max}")
    if int(n) != n or n < 2:
        raise LevelsError(f"need an integer N >= 2, got {n}")
    n = int(n)
    values = b_min * (b_max / b_min) ** (np.arange(n) / (n - 1))
    values[0], values[-1] = b_min, b_max
    return DisparityLevels(values)


def expected_disparity(prob: Tensor, levels: DisparityLevels) -> Tensor:
    """(B, N, H, W) probability volume -> (B, 1, H, W) disparity in pixels."""
    b = level_values(levels)
    if prob.ndim != 4 or prob.shape[1] != b.size:
        raise LevelsError(f"volume of shape {prob.shape} does not carry {b.size} level channels")
    weights = b.astype(prob.dtype).reshape(1, -1, 1, 1)
    return ops.sum(ops.mul(prob, weights), axis=1, keepdims=True)


def _check_positive(values: np.ndarray, what: str) -> None:
    if values.size and not np.all(values > 0):
        raise DisparityRangeError(f"{what} must be > 0 everywhere, got min {values.min()}")


def disparity_to_depth(d: MapLike, rig: CameraRig) -> MapLike:
    """D = B·f_x / d (Tensor in -> Tensor out, ndarray in -> ndarray out)."""
    if isinstance(d, Tensor):
        _check_positive(d.data, "disparity")
        return ops.div(rig.bf, d)
    d = np.asarray(d, dtype=np.float64)
    _check_positive(d, "disparity")
    return rig.bf / d


def depth_to_disparity(depth: MapLike, rig: CameraRig) -> MapLike:
    if isinstance(depth, Tensor):
        _check_positive(depth.data, "depth")
        return ops.div(rig.bf, depth)
    depth = np.asarray(depth, dtype=np.float64)
    _check_positive(depth, "depth")
    return rig.bf / depth
