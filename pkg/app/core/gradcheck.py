# app/core/gradcheck.py
# =============================================================================
# LAYER: CORE / finite-difference gradient checker (double precision)
# =============================================================================
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from .tensor import GradientError, Tensor, backward, no_grad, zero_grad

__all__ = ["GradCheckResult", "numerical_gradients", "check_gradients"]

# denominator floor: FD noise at step 1e-5 stays far below this
_REL_FLOOR = 1e-5


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    per_input: List[float]

    def ok(self, rtol: float) -> bool:
        return self.max_rel_error < rtol


def numerical_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
) -> List[np.ndarray]:
    """Central differences of scalar fn(*inputs) w.r.t. every input element."""
    grads = []
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                f_plus = fn(*inputs).item()
            flat[i] = orig - eps
            with no_grad():
                f_minus = fn(*inputs).item()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    rtol: float = 1e-4,
) -> GradCheckResult:
    """
    Compare backward() grads with central differences.
    Relative error per input: ‖analytic − numeric‖₂ / max(‖analytic‖₂ + ‖numeric‖₂, floor).
    Raises GradientError when any input exceeds `rtol`.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise GradientError(f"gradient checks need float64 inputs, got {t.dtype}")
        t.requires_grad = True
    zero_grad(inputs)
    backward(fn(*inputs))
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    numeric = numerical_gradients(fn, inputs, eps)

    errors = []
    for a, n in zip(analytic, numeric):
        denom = max(float(np.linalg.norm(a) + np.linalg.norm(n)), _REL_FLOOR)
        errors.append(float(np.linalg.norm(a - n)) / denom)
    result = GradCheckResult(max_rel_error=max(errors) if errors else 0.0, per_input=errors)
    if not result.ok(rtol):
        raise GradientError(f"gradient check failed: relative errors {errors} exceed {rtol}")
    return result
