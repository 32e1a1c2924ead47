# app/config/__init__.py
# ============================================
# LAYER: CONFIG PACKAGE EXPORTS
# ============================================

from .train_config import (
    ConfigError,
    TrainConfig,
    DEFAULT_PROFILES_PATH,
    load_profiles,
    load_config,
    read_key_values,
    config_hash,
)

__all__ = [
    "ConfigError",
    "TrainConfig",
    "DEFAULT_PROFILES_PATH",
    "load_profiles",
    "load_config",
    "read_key_values",
    "config_hash",
]
