# app/schemas/metrics.py
# =============================================================================
# LAYER: SCHEMA
#   - MetricReport: หนึ่งแถวของผลประเมิน (depth + disparity metrics)
# =============================================================================
from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, model_validator

__all__ = ["MetricReport", "CSV_COLUMNS"]

CSV_COLUMNS = [
    "sample_id",
    "mode",
    "abs_rel",
    "sq_rel",
    "rmse",
    "log_rmse",
    "a1",
    "a2",
    "a3",
    "epe",
    "d1",
    "n_pixels",
]


class MetricReport(BaseModel):
    sample_id: str = "all"
    mode: Literal["mono", "stereo"] = "mono"
    abs_rel: float = Field(0.0, ge=0.0)
    sq_rel: float = Field(0.0, ge=0.0)
    rmse: float = Field(0.0, ge=0.0)
    log_rmse: float = Field(0.0, ge=0.0)
    a1: float = Field(0.0, ge=0.0, le=1.0)
    a2: float = Field(0.0, ge=0.0, le=1.0)
    a3: float = Field(0.0, ge=0.0, le=1.0)
    epe: float = Field(0.0, ge=0.0)
    d1: float = Field(0.0, ge=0.0, le=1.0)
    n_pixels: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _thresholds_ordered(self) -> "MetricReport":
        if not (self.a1 <= self.a2 <= self.a3):
            raise ValueError(f"threshold accuracies must satisfy a1 <= a2 <= a3, got {self.a1}, {self.a2}, {self.a3}")
        return self
