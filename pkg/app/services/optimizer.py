# app/services/optimizer.py
# =============================================================================
# Adam ต่อ step (β1=0.5, β2=0.999) บน parameter groups แบบ dict {'tag','params','lr'}
# - parameter ที่ grad เป็น None จะถูกข้าม (frozen / ไม่อยู่ใน path)
# - step counter แยกต่อ parameter (bias correction ถูกต้องแม้เริ่มได้ grad ทีหลัง)
# =============================================================================
from __future__ import annotations

import logging
from typing import Dict, List, Mapping, Optional

import numpy as np

from app.core import Tensor

log = logging.getLogger(__name__)

__all__ = ["Adam", "build_param_groups"]


def build_param_groups(groups: Mapping[str, Mapping[str, Tensor]], lr: float = 1e-4) -> List[Dict]:
    return [{"tag": tag, "params": dict(params), "lr": lr} for tag, params in groups.items()]


class Adam:
    def __init__(
        self,
        param_groups: List[Dict],
        beta1: float = 0.5,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.param_groups = param_groups
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        # state[name] = {"m": ndarray, "v": ndarray, "t": int}
        self.state: Dict[str, Dict] = {}
        self.updates = 0

    @property
    def tags(self) -> List[str]:
        return [g["tag"] for g in self.param_groups]

    def parameters(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for g in self.param_groups:
            out.update(g["params"])
        return out

    def set_lr(self, lrs: Mapping[str, float]) -> None:
        for g in self.param_groups:
            if g["tag"] in lrs:
                g["lr"] = float(lrs[g["tag"]])

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def step(self, lrs: Optional[Mapping[str, float]] = None) -> int:
        """Apply one update; returns the number of parameter tensors touched."""
        if lrs:
            self.set_lr(lrs)
        touched = 0
        b1, b2 = self.beta1, self.beta2
        for g in self.param_groups:
            lr = g["lr"]
            for name, p in g["params"].items():
                if p.grad is None:
                    continue
                st = self.state.get(name)
                if st is None:
                    st = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
                    self.state[name] = st
                grad = p.grad.astype(p.data.dtype, copy=False)
                st["t"] += 1
                st["m"] = b1 * st["m"] + (1.0 - b1) * grad
                st["v"] = b2 * st["v"] + (1.0 - b2) * grad * grad
                m_hat = st["m"] / (1.0 - b1 ** st["t"])
                v_hat = st["v"] / (1.0 - b2 ** st["t"])
                p.data -= (lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype, copy=False)
                touched += 1
        self.updates += 1
        return touched

    # ---- persistence ----
    def state_dict(self) -> Dict[str, np.ndarray]:
        """Flat map: '<param>/m', '<param>/v', '<param>/t'."""
        out: Dict[str, np.ndarray] = {}
        for name, st in self.state.items():
            out[f"{name}/m"] = st["m"]
            out[f"{name}/v"] = st["v"]
            out[f"{name}/t"] = np.array([float(st["t"])])
        return out

    def load_state_dict(self, flat: Mapping[str, np.ndarray], updates: int = 0) -> None:
        known = self.parameters()
        state: Dict[str, Dict] = {}
        for key, arr in flat.items():
            name, _, field = key.rpartition("/")
            if name not in known:
                raise KeyError(f"optimizer state for unknown parameter {name!r}")
            state.setdefault(name, {})[field] = arr
        for name, st in state.items():
            if set(st) != {"m", "v", "t"}:
                raise KeyError(f"incomplete optimizer state for {name!r}: {sorted(st)}")
            dtype = known[name].dtype
            self.state[name] = {
                "m": np.asarray(st["m"], dtype=dtype).copy(),
                "v": np.asarray(st["v"], dtype=dtype).copy(),
                "t": int(np.asarray(st["t"]).reshape(-1)[0]),
            }
        self.updates = int(updates)
        log.debug("restored Adam state for %d parameters", len(state))
