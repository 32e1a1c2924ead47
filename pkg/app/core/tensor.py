# app/core/tensor.py
# =============================================================================
# LAYER: CORE / dense tensor + reverse-mode autodiff (define-by-run)
# -----------------------------------------------------------------------------
# - Tensor ห่อ numpy array + grad buffer
# - ทุก op บันทึก parents + backward rule ไว้ใน tensor ผลลัพธ์ (ไม่มี static graph)
# - Tape เรียง node ตามลำดับการรันจริง แล้ว backward ย้อนกลับครั้งเดียว
# =============================================================================
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "no_grad",
    "is_grad_enabled",
    "make_result",
    "zero_grad",
    "ShapeMismatchError",
    "EmptyTensorError",
    "GradientError",
    "NonFiniteError",
]


# =============================================================================
# Errors
# =============================================================================
class ShapeMismatchError(ValueError):
    """Operand shapes cannot be combined by the requested op."""


class EmptyTensorError(ValueError):
    """Reduction or pooling over a tensor with no elements."""


class GradientError(ValueError):
    """backward() misuse: non-scalar loss, untracked loss, malformed grads."""


class NonFiniteError(ValueError):
    """NaN reached an op that requires finite input."""


# =============================================================================
# Grad mode (thread-local, one tape per thread)
# =============================================================================
_SEQ = itertools.count()
_mode = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_mode, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """ปิดการบันทึก graph ชั่วคราว (ใช้กับ teacher pass และ inference)"""
    prev = is_grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


# =============================================================================
# Tensor
# =============================================================================
class Tensor:
    """
    Dense float tensor.

    `data` is treated as immutable once created; only `grad` buffers and
    optimizer updates on leaf parameters write in place.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_grad_fn", "_seq")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        *,
        dtype=None,
        name: Optional[str] = None,
    ) -> None:
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._grad_fn: Optional[GradFn] = None
        self._seq = next(_SEQ)

    # ---- shape helpers ----
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f" '{self.name}'" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype}{flag})"


def make_result(data: np.ndarray, parents: Sequence[Tensor], grad_fn: GradFn) -> Tensor:
    """สร้าง tensor ผลลัพธ์ของ op; ผูก backward rule เฉพาะเมื่อมี parent ที่ต้องการ grad"""
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# =============================================================================
# Tape
# =============================================================================
class Tape:
    """Execution-ordered record of every tracked node reachable from a root."""

    def __init__(self, nodes: List[Tensor]) -> None:
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        seen: Dict[int, Tensor] = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen or not node.requires_grad:
                continue
            seen[id(node)] = node
            stack.extend(node._parents)
        # _seq เพิ่มขึ้นตามลำดับการสร้าง => ลำดับการรันจริง (topological)
        return cls(sorted(seen.values(), key=lambda t: t._seq))

    def __len__(self) -> int:
        return len(self.nodes)

    def run_backward(self, seed: np.ndarray) -> None:
        if not self.nodes:
            return
        pending: Dict[int, np.ndarray] = {id(self.nodes[-1]): seed}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            if node._grad_fn is None:
                continue
            parent_grads = node._grad_fn(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise GradientError(
                        f"backward rule produced grad of shape {pg.shape} for input of shape {parent.shape}"
                    )
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg


def backward(loss: Tensor) -> Tape:
    """Accumulate dloss/dt into `.grad` of every tracked tensor reachable from `loss`."""
    if loss.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("loss does not depend on any tensor that requires grad")
    tape = Tape.record(loss)
    tape.run_backward(np.ones_like(loss.data))
    return tape
