# app/services/schedule.py
# =============================================================================
# Multi-stage schedule: step gating + learning-rate policy
# -----------------------------------------------------------------------------
# - step 1 ตลอด, step 2 ตั้งแต่ E1, step 3 ตั้งแต่ E2
# - lr = base · 0.5^(จำนวน milestone m ที่ enable_epoch < m <= epoch)
# - group ที่ step ก่อนหน้าเคยเทรนแล้ว: × revisit_factor
# =============================================================================
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

__all__ = ["STEP_GROUPS", "StageSchedule", "active_steps", "step_enabled_epoch", "learning_rate", "group_learning_rate"]

STEP_GROUPS: Dict[int, Tuple[str, ...]] = {
    1: ("encoder", "agg_blocks", "decoder_block", "out_mono"),
    2: ("agg_blocks", "decoder_block", "mfm", "out_mono", "out_stereo"),
    3: ("agg_blocks", "decoder_block", "out_mono"),
}


@dataclass(frozen=True)
class StageSchedule:
    e1: int = 20
    e2: int = 30
    total_epochs: int = 50
    lr_base: float = 1e-4
    lr_halving_epochs: Tuple[int, ...] = (20, 30, 40, 45)
    revisit_factor: float = 0.1
    max_step: int = 3

    def __post_init__(self) -> None:
        if not (0 <= self.e1 <= self.e2 <= self.total_epochs):
            raise ValueError(f"need 0 <= E1 <= E2 <= total_epochs, got {self.e1}, {self.e2}, {self.total_epochs}")
        if self.max_step not in (1, 2, 3):
            raise ValueError(f"max_step must be 1, 2 or 3, got {self.max_step}")


def step_enabled_epoch(step_id: int, schedule: StageSchedule) -> int:
    if step_id not in STEP_GROUPS:
        raise ValueError(f"unknown step id {step_id}")
    return {1: 0, 2: schedule.e1, 3: schedule.e2}[step_id]


def active_steps(epoch: int, schedule: StageSchedule) -> Tuple[int, ...]:
    return tuple(
        k for k in (1, 2, 3) if k <= schedule.max_step and epoch >= step_enabled_epoch(k, schedule)
    )


def group_learning_rate(epoch: int, step_id: int, group: str, schedule: StageSchedule) -> float:
    if group not in STEP_GROUPS[step_id]:
        raise ValueError(f"group {group!r} is not optimised by step {step_id}")
    start = step_enabled_epoch(step_id, schedule)
    halvings = sum(1 for m in schedule.lr_halving_epochs if start < m <= epoch)
    lr = schedule.lr_base * 0.5 ** halvings
    revisited = any(group in STEP_GROUPS[j] for j in range(1, step_id))
    return lr * schedule.revisit_factor if revisited else lr


def learning_rate(epoch: int, step_id: int, schedule: StageSchedule) -> Dict[str, float]:
    """Per-group learning rates of `step_id` at `epoch`."""
    return {g: group_learning_rate(epoch, step_id, g, schedule) for g in STEP_GROUPS[step_id]}
