# app/adapters/synthetic_stereo.py
# =============================================================================
# LAYER: ADAPTER / synthetic rectified stereo pairs (ground plane + boxes)
# -----------------------------------------------------------------------------
# - ground: disparity เป็นฟังก์ชันเชิงเส้นของแถว (monocular cue)
# - box: ตั้งบนพื้น, ขนาดที่เห็น ∝ disparity
# - left view วาดแบบ painter (ไกล -> ใกล้)
# - right view = forward map ต่อ scanline, disparity มากสุดชนะ,
#   รู (occluded ใน right) เติมด้วย texture ของพื้น
# - integer disparity เป็นค่า default (round-trip ตรงเป๊ะ)
# =============================================================================
from __future__ import annotations

import logging
import math
from typing import Iterator, List, Optional, Tuple

import numpy as np
from scipy import ndimage

from app.analysis.disparity import CameraRig
from app.analysis.warp import LEFT, in_view
from app.schemas.sample import BoxSpec, SceneSpec, StereoSample

log = logging.getLogger(__name__)

__all__ = [
    "SceneSpecError",
    "SPLIT_IDS",
    "value_noise",
    "ground_disparity",
    "box_rows",
    "generate",
    "random_scene_spec",
    "dataset",
]

SPLIT_IDS = {"train": 0, "val": 1, "test": 2}


class SceneSpecError(ValueError):
    """Scene description that cannot be rendered consistently."""


# =============================================================================
# Textures
# =============================================================================
def value_noise(
    rng: np.random.Generator,
    height: int,
    width: int,
    octaves: int = 4,
    base_cell: int = 1,
    persistence: float = 0.6,
) -> np.ndarray:
    """Multi-octave value noise, (3, H, W) rescaled into [0.05, 0.95]; finest octave has the largest weight."""
    out = np.zeros((3, height, width))
    amp, total = 1.0, 0.0
    for o in range(octaves):
        cell = base_cell * 2**o
        gh = int(math.ceil(height / cell)) + 1
        gw = int(math.ceil(width / cell)) + 1
        grid = rng.random((3, gh, gw))
        if cell > 1:
            grid = ndimage.zoom(grid, (1, cell, cell), order=1, mode="nearest")
        out += amp * grid[:, :height, :width]
        total += amp
        amp *= persistence
    out /= total
    lo = out.min(axis=(1, 2), keepdims=True)
    hi = out.max(axis=(1, 2), keepdims=True)
    return 0.05 + 0.9 * (out - lo) / np.maximum(hi - lo, 1e-12)


# =============================================================================
# Geometry
# =============================================================================
def ground_disparity(spec: SceneSpec) -> np.ndarray:
    """Ground disparity per row, shape (H,)."""
    rows = np.arange(spec.height, dtype=np.float64)
    g = spec.ground_top + (spec.ground_bottom - spec.ground_top) * rows / max(spec.height - 1, 1)
    return g if spec.subpixel else np.rint(g)


def _box_disparity(box: BoxSpec, spec: SceneSpec) -> float:
    return float(box.disparity) if spec.subpixel else float(np.rint(box.disparity))


def box_rows(box: BoxSpec, spec: SceneSpec, ground: Optional[np.ndarray] = None) -> Tuple[int, int]:
    """(top, bottom) rows of a box; bottom is the last row whose ground lies behind the box."""
    g = ground_disparity(spec) if ground is None else ground
    d = _box_disparity(box, spec)
    behind = np.nonzero(g < d)[0]
    if behind.size == 0:
        raise SceneSpecError(f"box disparity {d} does not exceed the ground disparity at any row")
    bottom = int(behind[-1])
    height = max(2, int(round(box.size_factor * d)))
    return bottom - height + 1, bottom


def _box_width(box: BoxSpec, spec: SceneSpec) -> int:
    d = _box_disparity(box, spec)
    return max(2, int(round(box.aspect * box.size_factor * d)))


def _validate(spec: SceneSpec) -> None:
    problems: List[str] = []
    if spec.height < 2 or spec.width < 2:
        problems.append(f"image {spec.height}x{spec.width} too small")
    if not 0 <= spec.d_min <= spec.d_max:
        problems.append(f"need 0 <= d_min <= d_max, got {spec.d_min}, {spec.d_max}")
    if spec.ground_top > spec.ground_bottom:
        problems.append(f"ground disparity must not decrease downwards ({spec.ground_top} > {spec.ground_bottom})")
    for name in ("ground_top", "ground_bottom"):
        v = getattr(spec, name)
        if not spec.d_min <= v <= spec.d_max:
            problems.append(f"{name}={v} outside [{spec.d_min}, {spec.d_max}]")
    for i, box in enumerate(spec.boxes):
        d = _box_disparity(box, spec)
        if not spec.d_min <= d <= spec.d_max:
            problems.append(f"box {i} disparity {d} outside [{spec.d_min}, {spec.d_max}]")
        if not 0 <= box.x < spec.width:
            problems.append(f"box {i} column {box.x} outside [0, {spec.width})")
        if box.size_factor <= 0 or box.aspect <= 0:
            problems.append(f"box {i} needs positive size_factor and aspect")
    if problems:
        raise SceneSpecError("; ".join(problems))


# =============================================================================
# Rendering
# =============================================================================
def _render_left(
    spec: SceneSpec, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    H, W = spec.height, spec.width
    pad = int(math.ceil(spec.d_max)) + 2
    ground_tex = value_noise(rng, H, W + pad)
    g = ground_disparity(spec)

    left = ground_tex[:, :, :W].copy()
    disp = np.repeat(g[:, None], W, axis=1)

    # painter: ไกลก่อน ใกล้ทับทีหลัง
    for box in sorted(spec.boxes, key=lambda b: _box_disparity(b, spec)):
        d = _box_disparity(box, spec)
        top, bottom = box_rows(box, spec, g)
        bw = _box_width(box, spec)
        bh = bottom - top + 1
        tex = value_noise(rng, bh, bw)
        y0, x0 = max(top, 0), box.x
        y1, x1 = bottom + 1, min(box.x + bw, W)
        left[:, y0:y1, x0:x1] = tex[:, y0 - top :, : x1 - x0]
        disp[y0:y1, x0:x1] = d
    return left, disp, ground_tex, g


def _ground_at(ground_tex: np.ndarray, y: int, u: np.ndarray) -> np.ndarray:
    """Ground texture of row y at (possibly fractional) columns u."""
    u0 = np.floor(u).astype(np.int64)
    frac = u - u0
    u0 = np.clip(u0, 0, ground_tex.shape[-1] - 1)
    u1 = np.clip(u0 + 1, 0, ground_tex.shape[-1] - 1)
    row = ground_tex[:, y]
    return row[:, u0] * (1.0 - frac) + row[:, u1] * frac


def _render_right(
    left: np.ndarray, disp: np.ndarray, ground_tex: np.ndarray, g: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    _, H, W = left.shape
    right = np.empty_like(left)
    disp_right = np.empty_like(disp)
    visible = np.ones_like(disp)
    xs = np.arange(W, dtype=np.float64)
    cols = np.arange(W)

    for y in range(H):
        d = disp[y]
        target = np.floor(xs - d + 0.5).astype(np.int64)
        inside = (target >= 0) & (target < W)

        # เรียง disparity มาก -> น้อย (stable), ตัวแรกของแต่ละ target = ผู้ชนะ
        order = np.argsort(-d, kind="stable")
        order = order[inside[order]]
        hit, first = np.unique(target[order], return_index=True)
        winners = order[first]

        filled = np.zeros(W, dtype=bool)
        filled[hit] = True
        right[:, y, hit] = left[:, y, winners]
        disp_right[y, hit] = d[winners]

        holes = cols[~filled]
        right[:, y, holes] = _ground_at(ground_tex, y, holes + g[y])
        disp_right[y, holes] = g[y]

        winner_d = np.full(W, -np.inf)
        winner_d[hit] = d[winners]
        visible[y, inside] = (d[inside] >= winner_d[target[inside]]).astype(np.float64)
    return right, disp_right, visible


def generate(
    spec: SceneSpec,
    rng_seed: int = 0,
    *,
    rig: Optional[CameraRig] = None,
    sample_id: str = "",
) -> StereoSample:
    """Render one rectified pair with left/right ground-truth disparity and a validity record."""
    _validate(spec)
    rng = np.random.default_rng([int(spec.texture_seed), int(rng_seed)])
    left, disp, ground_tex, g = _render_left(spec, rng)
    right, disp_right, visible = _render_right(left, disp, ground_tex, g)
    validity = visible * in_view(disp, LEFT)

    log.debug("rendered %s (%d boxes, seed=%d)", sample_id or "sample", len(spec.boxes), rng_seed)
    return StereoSample(
        left=left,
        right=right,
        disparity=disp[None],
        disparity_right=disp_right[None],
        validity=validity[None],
        rig=rig if rig is not None else CameraRig(),
        sample_id=sample_id,
        seed=int(rng_seed),
    )


# =============================================================================
# Scene sampling / dataset stream
# =============================================================================
def random_scene_spec(
    rng: np.random.Generator,
    height: int = 64,
    width: int = 128,
    d_min: float = 1.0,
    d_max: float = 24.0,
    max_boxes: int = 3,
    subpixel: bool = False,
) -> SceneSpec:
    top = int(math.ceil(d_min))
    hi = int(math.floor(d_max))
    if hi < top + 2:
        raise SceneSpecError(f"disparity range [{d_min}, {d_max}] too narrow for ground plus boxes")
    lo_b = max(top + 1, int(round(0.35 * hi)))
    hi_b = max(lo_b, int(round(0.6 * hi)))
    bottom = float(rng.integers(lo_b, hi_b + 1))

    boxes = []
    for _ in range(int(rng.integers(1, max_boxes + 1))):
        d = float(rng.integers(top + 2, hi + 1))
        if subpixel:
            d = min(d + float(rng.uniform(-0.5, 0.5)), hi)
        boxes.append(
            BoxSpec(
                x=int(rng.integers(0, max(width - 4, 1))),
                disparity=d,
                size_factor=float(rng.uniform(0.9, 1.4)),
                aspect=float(rng.uniform(0.5, 1.0)),
            )
        )
    return SceneSpec(
        height=height,
        width=width,
        ground_top=float(top),
        ground_bottom=bottom,
        boxes=tuple(boxes),
        texture_seed=int(rng.integers(0, 2**31 - 1)),
        d_min=float(d_min),
        d_max=float(d_max),
        subpixel=subpixel,
    )


def dataset(
    count: int,
    seed: int = 0,
    split: str = "train",
    *,
    height: int = 64,
    width: int = 128,
    d_min: float = 1.0,
    d_max: float = 24.0,
    rig: Optional[CameraRig] = None,
    max_boxes: int = 3,
) -> Iterator[StereoSample]:
    """Deterministic sample stream; splits draw from disjoint seed sequences."""
    if split not in SPLIT_IDS:
        raise ValueError(f"unknown split {split!r}; expected one of {sorted(SPLIT_IDS)}")
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    root = np.random.SeedSequence([int(seed), SPLIT_IDS[split]])
    for i, child in enumerate(root.spawn(count)):
        rng = np.random.default_rng(child)
        spec = random_scene_spec(rng, height, width, d_min, d_max, max_boxes)
        sample_seed = int(child.generate_state(1)[0])
        yield generate(spec, sample_seed, rig=rig, sample_id=f"{split}_{i:05d}")
