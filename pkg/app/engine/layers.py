# app/engine/layers.py
# =============================================================================
# LAYER: ENGINE / parameterised building blocks
# -----------------------------------------------------------------------------
# - Module: registry ของ parameter / child (ชื่อแบบ dotted)
# - Conv2d, SEConv (conv3x3 + ELU + channel-attention gate, reduction 4)
# =============================================================================
from __future__ import annotations

from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from app.core import Tensor, ops

__all__ = ["Module", "Conv2d", "SEConv", "he_normal"]


def he_normal(rng: np.random.Generator, shape: Tuple[int, ...], dtype=np.float64, gain: float = 1.0) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return (rng.normal(0.0, gain * np.sqrt(2.0 / fan_in), size=shape)).astype(dtype)


class Module:
    """Minimal parameter container; names are dotted paths relative to the module."""

    def __init__(self) -> None:
        self._params: Dict[str, Tensor] = {}
        self._children: Dict[str, "Module"] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for child_name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def parameters(self) -> Iterator[Tensor]:
        for _, p in self.named_parameters():
            yield p


class Conv2d(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        kernel: int = 3,
        *,
        dtype=np.float64,
        gain: float = 1.0,
    ) -> None:
        super().__init__()
        if kernel not in (1, 3):
            raise ValueError(f"kernel must be 1 or 3, got {kernel}")
        self.padding = kernel // 2
        self.weight = self.add_param("weight", he_normal(rng, (out_channels, in_channels, kernel, kernel), dtype, gain))
        self.bias = self.add_param("bias", np.zeros(out_channels, dtype=dtype))

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=1, padding=self.padding)


class SEConv(Module):
    """3×3 conv + ELU followed by a squeeze-excitation channel gate."""

    def __init__(
        self,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        reduction: int = 4,
        *,
        dtype=np.float64,
    ) -> None:
        super().__init__()
        hidden = max(out_channels // reduction, 1)
        self.conv = self.add_child("conv", Conv2d(rng, in_channels, out_channels, 3, dtype=dtype))
        self.squeeze = self.add_child("squeeze", Conv2d(rng, out_channels, hidden, 1, dtype=dtype))
        self.excite = self.add_child("excite", Conv2d(rng, hidden, out_channels, 1, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.elu(self.conv(x))
        pooled = ops.mean(y, axis=(2, 3), keepdims=True)
        gate = ops.sigmoid(self.excite(ops.relu(self.squeeze(pooled))))
        return ops.mul(y, gate)
