"""
app.analysis package

- กฎทางเรขาคณิตของ stereo: disparity levels, warp convention, masks
- ไม่ import อะไรจาก app.logic / app.engine ที่นี่ (กันวงจร import)
- lazy import เพื่อไม่โหลดโมดูลย่อยโดยไม่จำเป็น
"""

from typing import TYPE_CHECKING
import importlib

__all__ = [
    "disparity",
    "warp",
    "masks",
]

def __getattr__(name: str):
    if name in __all__:
        mod = importlib.import_module(f"{__name__}.{name}")
        globals()[name] = mod  # cache
        return mod
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

if TYPE_CHECKING:
    from . import disparity, warp, masks  # noqa: F401
