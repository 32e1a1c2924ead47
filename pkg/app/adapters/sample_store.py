# app/adapters/sample_store.py
# =============================================================================
# LAYER: ADAPTER / sample persistence
# -----------------------------------------------------------------------------
# <root>/<split>/<sample_id>/{left,right,disp,disp_right,validity}.tiot
# <root>/<split>/<sample_id>/{left,right,disp}.png   (preview 8-bit)
# <root>/<split>/manifest.txt : "sample_id seed" ต่อบรรทัด
# <root>/<split>/rig.txt      : baseline / focal_x (key = value)
# =============================================================================
from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Tuple, Union

from dotenv import dotenv_values

from app.analysis.disparity import CameraRig
from app.schemas.sample import StereoSample
from app.utils.image_io import write_preview
from app.utils.tensor_io import load_tensor, save_tensor

log = logging.getLogger(__name__)

__all__ = ["MANIFEST", "save_sample", "save_split", "read_manifest", "load_sample", "load_split"]

PathLike = Union[str, Path]

MANIFEST = "manifest.txt"
RIG_FILE = "rig.txt"
_ARRAYS = {
    "left": "left",
    "right": "right",
    "disp": "disparity",
    "disp_right": "disparity_right",
    "validity": "validity",
}


def save_sample(split_dir: PathLike, sample: StereoSample, previews: bool = True) -> Path:
    if not sample.sample_id:
        raise ValueError("sample needs a sample_id to be stored")
    d = Path(split_dir) / sample.sample_id
    d.mkdir(parents=True, exist_ok=True)
    for fname, attr in _ARRAYS.items():
        save_tensor(d / f"{fname}.tiot", getattr(sample, attr))
    if previews:
        write_preview(d / "left.png", sample.left)
        write_preview(d / "right.png", sample.right)
        write_preview(d / "disp.png", sample.disparity, vmax=float(max(sample.disparity.max(), 1e-6)))
    return d


def _write_rig(split_dir: Path, rig: CameraRig) -> None:
    (split_dir / RIG_FILE).write_text(
        f"baseline = {rig.baseline!r}\nfocal_x = {rig.focal_x!r}\n", encoding="utf-8"
    )


def _read_rig(split_dir: Path) -> CameraRig:
    p = split_dir / RIG_FILE
    if not p.exists():
        return CameraRig()
    values = dotenv_values(p)
    return CameraRig(baseline=float(values["baseline"]), focal_x=float(values["focal_x"]))


def save_split(root: PathLike, split: str, samples: Iterable[StereoSample], previews: bool = True) -> List[str]:
    """Store a whole split and its manifest; returns the stored sample ids in order."""
    split_dir = Path(root) / split
    split_dir.mkdir(parents=True, exist_ok=True)
    rows: List[Tuple[str, int]] = []
    rig = None
    for sample in samples:
        save_sample(split_dir, sample, previews)
        rows.append((sample.sample_id, sample.seed))
        rig = sample.rig
    if rig is not None:
        _write_rig(split_dir, rig)
    (split_dir / MANIFEST).write_text("".join(f"{sid} {seed}\n" for sid, seed in rows), encoding="utf-8")
    log.info("stored %d %s samples under %s", len(rows), split, split_dir)
    return [sid for sid, _ in rows]


def read_manifest(split_dir: PathLike) -> List[Tuple[str, int]]:
    p = Path(split_dir) / MANIFEST
    if not p.exists():
        raise FileNotFoundError(f"manifest not found: {p}")
    rows: List[Tuple[str, int]] = []
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{p}:{lineno}: expected 'sample_id seed', got {line!r}")
        rows.append((parts[0], int(parts[1])))
    return rows


def load_sample(split_dir: PathLike, sample_id: str, seed: int = 0, rig: Optional[CameraRig] = None) -> StereoSample:
    d = Path(split_dir) / sample_id
    if not d.is_dir():
        raise FileNotFoundError(f"sample directory not found: {d}")
    arrays = {attr: load_tensor(d / f"{fname}.tiot") for fname, attr in _ARRAYS.items()}
    return StereoSample(**arrays, rig=rig if rig is not None else _read_rig(Path(split_dir)), sample_id=sample_id, seed=seed)


def load_split(root: PathLike, split: str) -> Iterator[StereoSample]:
    """Samples of a stored split in manifest order."""
    split_dir = Path(root) / split
    rig = _read_rig(split_dir)
    for sid, seed in read_manifest(split_dir):
        yield load_sample(split_dir, sid, seed, rig)
