# app/core/__init__.py
# ============================================
# LAYER: CORE PACKAGE EXPORTS
# ============================================

from .tensor import (
    Tensor,
    Tape,
    backward,
    no_grad,
    is_grad_enabled,
    ShapeMismatchError,
    EmptyTensorError,
    GradientError,
    NonFiniteError,
)
from . import ops

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "no_grad",
    "is_grad_enabled",
    "ShapeMismatchError",
    "EmptyTensorError",
    "GradientError",
    "NonFiniteError",
    "ops",
]
