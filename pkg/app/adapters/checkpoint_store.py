# app/adapters/checkpoint_store.py
# =============================================================================
# LAYER: ADAPTER / checkpoint directory
# -----------------------------------------------------------------------------
# <dir>/<group>/<block>/<param>.tiot      parameter ทุกตัว
# <dir>/levels.tiot                       disparity levels b_1..b_N
# <dir>/meta.txt                          key = value (epoch, config_hash, ...)
# <dir>/config.json                       TrainConfig ที่ใช้เทรน
# <dir>/optim/step<k>/<param>/{m,v,t}.tiot  Adam state (สำหรับ --resume)
# =============================================================================
from __future__ import annotations

import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np
from dotenv import dotenv_values

from app.config.train_config import TrainConfig, config_hash
from app.engine.network import GROUPS
from app.utils.tensor_io import load_tensor, save_tensor

log = logging.getLogger(__name__)

__all__ = ["CheckpointError", "Checkpoint", "save_checkpoint", "load_checkpoint", "is_checkpoint"]

PathLike = Union[str, Path]

META_FILE = "meta.txt"
CONFIG_FILE = "config.json"
LEVELS_FILE = "levels.tiot"
OPTIM_DIR = "optim"


class CheckpointError(ValueError):
    """Checkpoint directory missing pieces or inconsistent with itself."""


@dataclass
class Checkpoint:
    state: Dict[str, np.ndarray]
    levels: np.ndarray
    meta: Dict[str, str] = field(default_factory=dict)
    config: Optional[TrainConfig] = None
    optim: Dict[int, Dict[str, np.ndarray]] = field(default_factory=dict)

    @property
    def epoch(self) -> int:
        return int(self.meta.get("epoch", 0))

    def optim_updates(self, step_id: int) -> int:
        return int(self.meta.get(f"optim_step{step_id}_updates", 0))


def _write_tree(root: Path, arrays: Mapping[str, np.ndarray]) -> None:
    for name, arr in arrays.items():
        save_tensor(root / f"{name}.tiot", arr)


def _read_tree(root: Path) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    for p in sorted(root.rglob("*.tiot")):
        out[p.relative_to(root).with_suffix("").as_posix()] = load_tensor(p)
    return out


def _write_checkpoint(
    d: Path,
    state: Mapping[str, np.ndarray],
    levels: np.ndarray,
    epoch: int,
    config: Optional[TrainConfig],
    optim: Optional[Mapping[int, Mapping[str, np.ndarray]]],
    optim_updates: Optional[Mapping[int, int]],
) -> None:
    _write_tree(d, state)
    save_tensor(d / LEVELS_FILE, np.asarray(levels, dtype=np.float64))
    for step_id, flat in (optim or {}).items():
        _write_tree(d / OPTIM_DIR / f"step{step_id}", flat)

    meta = {"epoch": str(int(epoch)), "num_tensors": str(len(state))}
    if config is not None:
        meta["config_hash"] = config_hash(config)
        meta["profile"] = config.profile
        (d / CONFIG_FILE).write_text(config.model_dump_json(indent=2), encoding="utf-8")
    for step_id, n in (optim_updates or {}).items():
        meta[f"optim_step{step_id}_updates"] = str(int(n))
    # meta.txt goes last: is_checkpoint() keys on it
    (d / META_FILE).write_text("".join(f"{k} = {v}\n" for k, v in meta.items()), encoding="utf-8")


def save_checkpoint(
    directory: PathLike,
    state: Mapping[str, np.ndarray],
    levels: np.ndarray,
    *,
    epoch: int,
    config: Optional[TrainConfig] = None,
    optim: Optional[Mapping[int, Mapping[str, np.ndarray]]] = None,
    optim_updates: Optional[Mapping[int, int]] = None,
) -> Path:
    """
    Write a complete checkpoint; an existing checkpoint at `directory` is replaced.

    The new tree is built in a sibling temp directory and renamed into place.
    The previous checkpoint is removed only after the new one is complete, so a
    failed save leaves it loadable.
    """
    d = Path(directory)
    if d.exists() and not is_checkpoint(d):
        raise CheckpointError(f"refusing to overwrite {d}: not a checkpoint directory")
    d.parent.mkdir(parents=True, exist_ok=True)

    tmp = Path(tempfile.mkdtemp(prefix=f".{d.name}.tmp-", dir=d.parent))
    try:
        _write_checkpoint(tmp, state, levels, epoch, config, optim, optim_updates)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise

    old: Optional[Path] = None
    if d.exists():
        old = d.with_name(f".{d.name}.old-{tmp.name.rsplit('-', 1)[-1]}")
        os.replace(d, old)
    try:
        os.replace(tmp, d)
    except OSError:
        if old is not None:
            os.replace(old, d)
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)
    log.info("checkpoint saved: %s (epoch %d, %d tensors)", d, epoch, len(state))
    return d


def is_checkpoint(directory: PathLike) -> bool:
    d = Path(directory)
    return (d / META_FILE).is_file() and (d / LEVELS_FILE).is_file()


def load_checkpoint(directory: PathLike) -> Checkpoint:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"checkpoint directory not found: {d}")
    if not is_checkpoint(d):
        raise CheckpointError(f"{d} lacks {META_FILE} or {LEVELS_FILE}")

    meta = {k: v for k, v in dotenv_values(d / META_FILE).items() if v is not None}
    state: Dict[str, np.ndarray] = {}
    for group in GROUPS:
        if (d / group).is_dir():
            state.update({f"{group}/{k}": v for k, v in _read_tree(d / group).items()})
    if "num_tensors" in meta and int(meta["num_tensors"]) != len(state):
        raise CheckpointError(f"{d}: meta lists {meta['num_tensors']} tensors, found {len(state)}")

    config = None
    if (d / CONFIG_FILE).is_file():
        config = TrainConfig.model_validate_json((d / CONFIG_FILE).read_text(encoding="utf-8"))
        if meta.get("config_hash") and meta["config_hash"] != config_hash(config):
            raise CheckpointError(f"{d}: config.json does not match config_hash in {META_FILE}")

    optim: Dict[int, Dict[str, np.ndarray]] = {}
    optim_root = d / OPTIM_DIR
    if optim_root.is_dir():
        for sub in sorted(optim_root.iterdir()):
            if sub.is_dir() and sub.name.startswith("step"):
                optim[int(sub.name[4:])] = _read_tree(sub)

    return Checkpoint(state=state, levels=load_tensor(d / LEVELS_FILE), meta=meta, config=config, optim=optim)
