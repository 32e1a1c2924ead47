# app/config/train_config.py
# =============================================================================
# LAYER: CONFIG / training / evaluation configuration
# -----------------------------------------------------------------------------
# ลำดับความสำคัญ: model defaults < profile (profiles.yaml) < config file < env
# - config file = ข้อความ `key = value` (อ่านด้วย dotenv_values)
# - env TIO_SEED override seed
# =============================================================================
from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from app.utils.settings import get_settings

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "TrainConfig",
    "DEFAULT_PROFILES_PATH",
    "load_profiles",
    "load_config",
    "read_key_values",
    "config_hash",
]

DEFAULT_PROFILES_PATH = Path(__file__).with_name("profiles.yaml")

# ชื่อ key ในไฟล์ config -> ชื่อ field
_KEY_ALIASES = {
    "E1": "e1",
    "E2": "e2",
    "N": "num_levels",
    "lambda_1": "lambda1",
    "lambda_2": "lambda2",
    "lambda_3": "lambda3",
    "lambda_4": "lambda4",
    "batch_size": "batch",
}


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        parts = [p for p in value.replace("[", "").replace("]", "").replace(" ", "").split(",") if p]
        return parts
    return value


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    profile: str = "desk"

    # ---- schedule ----
    epochs: int = 15
    e1: int = 5
    e2: int = 10
    lr: float = 1e-4
    lr_halving_epochs: Tuple[int, ...] = (8, 11, 13, 14)
    revisit_factor: float = 0.1
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    steps: Literal["1", "1+2", "1+2+3"] = "1+2+3"

    # ---- data ----
    batch: int = 4
    height: int = 64
    width: int = 128
    train_count: int = 200
    val_count: int = 40
    scale_range: Tuple[float, float] = (1.0, 1.25)
    flip_prob: float = 0.5
    color_jitter: float = 0.1

    # ---- geometry ----
    num_levels: int = 17
    b_min: float = 1.0
    b_max: float = 24.0
    baseline: float = 0.54
    focal_x: float = 100.0
    depth_cap: Optional[float] = None

    # ---- loss weights ----
    lambda1: float = 0.0008
    lambda2: float = 0.008
    lambda3: float = 0.01
    lambda4: float = 0.01
    alpha: float = 0.15
    beta: float = 0.01
    gamma: float = 2.0
    t1: float = 1.0
    t2: float = 0.13

    # ---- network ----
    encoder_widths: Tuple[int, int, int, int] = (16, 32, 64, 128)
    decoder_widths: Tuple[int, int, int] = (64, 32, 16)
    decoder_block_width: int = 16
    dtype: Literal["float32", "float64"] = "float32"

    # ---- ablation switches ----
    matching_module: Literal["mfm", "attn", "cat"] = "mfm"
    mfm_stages: Tuple[int, ...] = (3, 2, 1)
    distill_target: Literal["hybrid", "stereo"] = "hybrid"
    use_final_branch: bool = True
    use_occlusion_mask: bool = True
    d1_rule: Literal["any", "all"] = "any"

    # ---- run ----
    seed: int = 0
    data_dir: str = "data/synthetic"
    checkpoint_dir: str = "checkpoints/desk"
    log_csv: Optional[str] = "train_log.csv"

    # ---- validators ----
    @field_validator(
        "lr_halving_epochs", "scale_range", "encoder_widths", "decoder_widths", "mfm_stages", mode="before"
    )
    @classmethod
    def _parse_lists(cls, v: Any) -> Any:
        return _split_list(v)

    @field_validator("steps", mode="before")
    @classmethod
    def _parse_steps(cls, v: Any) -> Any:
        if isinstance(v, int):
            return {1: "1", 2: "1+2", 3: "1+2+3"}.get(v, str(v))
        return str(v).replace(" ", "")

    @field_validator("log_csv", mode="before")
    @classmethod
    def _empty_is_none(cls, v: Any) -> Any:
        if isinstance(v, str) and v.strip().lower() in ("", "none", "null"):
            return None
        return v

    @model_validator(mode="after")
    def _check_ranges(self) -> "TrainConfig":
        problems: List[str] = []
        if not (0 <= self.e1 <= self.e2 <= self.epochs):
            problems.append(f"need 0 <= E1 <= E2 <= epochs, got {self.e1}, {self.e2}, {self.epochs}")
        if not (0 < self.b_min < self.b_max):
            problems.append(f"need 0 < b_min < b_max, got {self.b_min}, {self.b_max}")
        if self.num_levels < 2:
            problems.append(f"need N >= 2, got {self.num_levels}")
        if not 0.0 <= self.alpha <= 1.0:
            problems.append(f"alpha must lie in [0, 1], got {self.alpha}")
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "beta", "gamma", "t1"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative")
        if self.t2 <= 0:
            problems.append(f"t2 must be > 0, got {self.t2}")
        if self.height % 16 or self.width % 16:
            problems.append(f"image size {self.height}x{self.width} must be divisible by 16")
        if self.batch < 1:
            problems.append(f"batch must be >= 1, got {self.batch}")
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            problems.append(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if self.baseline <= 0 or self.focal_x <= 0:
            problems.append("baseline and focal_x must be > 0")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    # ---- derived ----
    @property
    def active_step_ids(self) -> Tuple[int, ...]:
        return tuple(int(s) for s in self.steps.split("+"))

    @property
    def bf(self) -> float:
        return self.baseline * self.focal_x

    @property
    def effective_depth_cap(self) -> float:
        """Depth cap for evaluation; defaults to the farthest representable depth."""
        return float(self.depth_cap) if self.depth_cap is not None else self.bf / self.b_min


# =============================================================================
# Loaders
# =============================================================================
def _merge(a: Dict, b: Dict) -> Dict:
    out = dict(a)
    for k, v in (b or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_profiles(path: Optional[os.PathLike] = None) -> Dict[str, Dict[str, Any]]:
    import yaml

    p = Path(path) if path is not None else DEFAULT_PROFILES_PATH
    if not p.exists():
        raise ConfigError(f"profiles file not found: {p}")
    with open(p, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    defaults = data.get("defaults", {}) or {}
    profiles = data.get("profiles", {}) or {}
    return {name: _merge(defaults, body or {}) for name, body in profiles.items()}


def _normalise_keys(raw: Mapping[str, Any]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for key, value in raw.items():
        k = key.strip()
        if k == "image_size":
            try:
                h, w = str(value).lower().split("x")
                out["height"], out["width"] = int(h), int(w)
            except ValueError:
                raise ConfigError(f"image_size must look like HxW, got {value!r}") from None
            continue
        out[_KEY_ALIASES.get(k, k)] = value
    return out


def read_key_values(path: os.PathLike) -> Dict[str, Any]:
    """Parse a `key = value` config file."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    values = dotenv_values(p)
    return _normalise_keys({k: v for k, v in values.items() if v is not None})


def load_config(
    path: Optional[os.PathLike] = None,
    *,
    profile: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    profiles_path: Optional[os.PathLike] = None,
    env: Optional[Mapping[str, str]] = None,
) -> TrainConfig:
    """Build a validated TrainConfig (defaults < profile < file < overrides < env)."""
    file_values = read_key_values(path) if path is not None else {}
    extra = _normalise_keys(overrides or {})
    name = extra.get("profile") or file_values.get("profile") or profile or "desk"

    profiles = load_profiles(profiles_path)
    if name not in profiles:
        raise ConfigError(f"unknown profile {name!r}; available: {sorted(profiles)}")

    merged = _merge(_merge(profiles[name], file_values), extra)
    merged["profile"] = name

    seed_env = get_settings().SEED if env is None else env.get("TIO_SEED")
    if seed_env not in (None, ""):
        merged["seed"] = seed_env
        log.info("seed overridden from TIO_SEED=%s", seed_env)

    try:
        return TrainConfig(**merged)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc.errors(include_url=False)}") from None


def config_hash(cfg: TrainConfig) -> str:
    payload = json.dumps(cfg.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha1(payload.encode("utf-8")).hexdigest()
