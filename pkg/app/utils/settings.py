# =============================================================================
# Settings - อ่านค่า ENV (pydantic-settings + .env)
# =============================================================================
from __future__ import annotations

from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import AliasChoices, Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# โหลดไฟล์ .env (ถ้ามี)
load_dotenv(dotenv_path=Path(".") / ".env")


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="TIO_", extra="ignore")

    DATA_DIR: Optional[str] = None
    CHECKPOINT_DIR: Optional[str] = None
    PROFILES_PATH: Optional[str] = None
    LOG_LEVEL: str = Field("INFO", validation_alias=AliasChoices("LOG_LEVEL", "TIO_LOG_LEVEL"))
    # TIO_SEED: ว่าง = ไม่ override (TrainConfig ตรวจเป็น int เอง)
    SEED: Optional[str] = None

    def log_level_value(self) -> int:
        import logging

        level = logging.getLevelName(self.LOG_LEVEL.upper())
        if not isinstance(level, int):
            raise RuntimeError(f"unknown LOG_LEVEL: {self.LOG_LEVEL!r}")
        return level


def get_settings() -> Settings:
    """อ่าน ENV ใหม่ทุกครั้ง (ให้ monkeypatch ในเทสมีผล)"""
    return Settings()
