# app/schemas/__init__.py
# export schema types (dataclass สำหรับ array, pydantic สำหรับ report)
from .metrics import CSV_COLUMNS, MetricReport
from .sample import BoxSpec, SceneSpec, StereoSample

__all__ = ["BoxSpec", "SceneSpec", "StereoSample", "MetricReport", "CSV_COLUMNS"]
