# app/schemas/sample.py
# =============================================================================
# LAYER: SCHEMA
#   - StereoSample / SceneSpec / BoxSpec (ข้อมูล array ใช้ dataclass, ไม่ใช่ pydantic)
# =============================================================================
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

from app.analysis.disparity import CameraRig

__all__ = ["BoxSpec", "SceneSpec", "StereoSample"]


@dataclass(frozen=True)
class BoxSpec:
    """Fronto-parallel textured box standing on the ground plane."""

    x: int                 # left column in the left view
    disparity: float       # pixels
    size_factor: float = 1.2   # height = size_factor · disparity
    aspect: float = 0.8        # width = aspect · height


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 128
    ground_top: float = 1.0      # ground disparity at row 0
    ground_bottom: float = 12.0  # ground disparity at row H-1
    boxes: Tuple[BoxSpec, ...] = ()
    texture_seed: int = 0
    d_min: float = 1.0
    d_max: float = 24.0
    subpixel: bool = False


@dataclass(frozen=True)
class StereoSample:
    left: np.ndarray              # (3, H, W) in [0, 1]
    right: np.ndarray             # (3, H, W) in [0, 1]
    disparity: np.ndarray         # (1, H, W) left-view ground truth, pixels
    disparity_right: np.ndarray   # (1, H, W) right-view ground truth, pixels
    validity: np.ndarray          # (1, H, W) {0,1}: visible in the right view and in view
    rig: CameraRig = field(default_factory=CameraRig)
    sample_id: str = ""
    seed: int = 0

    @property
    def height(self) -> int:
        return int(self.left.shape[1])

    @property
    def width(self) -> int:
        return int(self.left.shape[2])

    def depth(self) -> np.ndarray:
        """Ground-truth depth; 0 where the disparity is 0 (excluded from metrics)."""
        d = self.disparity
        return np.where(d > 0, self.rig.bf / np.where(d > 0, d, 1.0), 0.0)

    def with_arrays(self, **arrays) -> "StereoSample":
        return replace(self, **arrays)
