# app/utils/image_io.py
# =============================================================================
# PNG I/O (Pillow): previews 8-bit, depth 16-bit, อ่านภาพ input เป็น float [0,1]
# =============================================================================
from __future__ import annotations

from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from app.utils.tensor_io import load_tensor

__all__ = ["read_image", "write_preview", "write_depth_png", "read_depth_png"]

PathLike = Union[str, Path]


def read_image(path: PathLike) -> np.ndarray:
    """PNG/JPEG -> (3, H, W) float64 in [0, 1]; `.tiot` files are loaded as stored."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"image not found: {p}")
    if p.suffix == ".tiot":
        arr = load_tensor(p).astype(np.float64)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValueError(f"{p}: expected a (3, H, W) tensor, got {arr.shape}")
        return arr
    with Image.open(p) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.ascontiguousarray(rgb.transpose(2, 0, 1))


def write_preview(path: PathLike, arr: np.ndarray, vmax: Optional[float] = None) -> Path:
    """(3, H, W) image in [0, 1] or (1, H, W)/(H, W) map scaled by vmax -> 8-bit PNG."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 3:
        img = Image.fromarray(np.clip(np.rint(a.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8), "RGB")
    else:
        a = a.reshape(a.shape[-2:])
        top = vmax if vmax is not None else (float(a.max()) if a.size and a.max() > 0 else 1.0)
        img = Image.fromarray(np.clip(np.rint(a / top * 255.0), 0, 255).astype(np.uint8), "L")
    img.save(p)
    return p


def write_depth_png(path: PathLike, depth: np.ndarray, cap: float) -> Path:
    """Depth linearly mapped to [0, 65535] over [0, cap] -> 16-bit grayscale PNG."""
    if cap <= 0:
        raise ValueError(f"depth cap must be > 0, got {cap}")
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    d = np.asarray(depth, dtype=np.float64).reshape(np.shape(depth)[-2:])
    q = np.clip(np.rint(d / cap * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(q).save(p)
    return p


def read_depth_png(path: PathLike, cap: float) -> np.ndarray:
    with Image.open(path) as im:
        q = np.asarray(im, dtype=np.float64)
    return q / 65535.0 * cap
