# app/services/evaluator.py
# =============================================================================
# Evaluation: depth metrics (median scaling optional) + EPE / D1
# -----------------------------------------------------------------------------
# - pixel ที่ gt = 0 ไม่ถูกนับ
# - median scaling: pred × median(gt)/median(pred) ก่อน clamp
# - clamp: pred -> [MIN_DEPTH, cap], gt -> ≤ cap
# - D1 rule "any" = (|err| > 3) ∨ (|err|/gt > 0.05) ; "all" = ∧ (แบบ benchmark)
# =============================================================================
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.analysis.disparity import expected_disparity
from app.core import Tensor, no_grad, ops
from app.engine.network import TwoInOneNet
from app.schemas.metrics import CSV_COLUMNS, MetricReport
from app.schemas.sample import StereoSample

log = logging.getLogger(__name__)

__all__ = [
    "NoValidPixelsError",
    "MIN_DEPTH",
    "depth_metrics",
    "disparity_metrics",
    "predict_disparity",
    "evaluate_sample",
    "evaluate_model",
    "aggregate",
    "write_reports",
    "read_reports",
]

MIN_DEPTH = 1e-3
MODES = ("mono", "stereo")
_DEPTH_FIELDS = ("abs_rel", "sq_rel", "rmse", "log_rmse", "a1", "a2", "a3")


class NoValidPixelsError(ValueError):
    """Nothing left to evaluate after masking."""


def _valid(gt: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    valid = np.isfinite(gt) & (gt > 0)
    if mask is not None:
        valid &= np.asarray(mask) > 0
    if not valid.any():
        raise NoValidPixelsError("no pixel with gt > 0 to evaluate")
    return valid


# =============================================================================
# Metrics
# =============================================================================
def depth_metrics(
    pred: np.ndarray,
    gt: np.ndarray,
    cap: Optional[float] = None,
    median_scale: bool = False,
    mask: Optional[np.ndarray] = None,
) -> MetricReport:
    """Seven depth metrics over pixels with gt > 0 (epe/d1 left at 0)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    valid = _valid(gt, mask)
    p, g = pred[valid], gt[valid]

    if median_scale:
        p = p * (np.median(g) / np.median(p))
    hi = np.inf if cap is None else float(cap)
    p = np.clip(p, MIN_DEPTH, hi)
    g = np.minimum(g, hi)

    thresh = np.maximum(g / p, p / g)
    return MetricReport(
        abs_rel=float(np.mean(np.abs(g - p) / g)),
        sq_rel=float(np.mean((g - p) ** 2 / g)),
        rmse=float(np.sqrt(np.mean((g - p) ** 2))),
        log_rmse=float(np.sqrt(np.mean((np.log(g) - np.log(p)) ** 2))),
        a1=float((thresh < 1.25).mean()),
        a2=float((thresh < 1.25**2).mean()),
        a3=float((thresh < 1.25**3).mean()),
        n_pixels=int(valid.sum()),
    )


def disparity_metrics(
    pred_d: np.ndarray,
    gt_d: np.ndarray,
    rule: str = "any",
    mask: Optional[np.ndarray] = None,
) -> Tuple[float, float]:
    """(EPE, D1) over pixels with gt > 0."""
    if rule not in ("any", "all"):
        raise ValueError(f"rule must be 'any' or 'all', got {rule!r}")
    pred_d = np.asarray(pred_d, dtype=np.float64)
    gt_d = np.asarray(gt_d, dtype=np.float64)
    if pred_d.shape != gt_d.shape:
        raise ValueError(f"prediction {pred_d.shape} and ground truth {gt_d.shape} differ in shape")
    valid = _valid(gt_d, mask)
    err = np.abs(pred_d[valid] - gt_d[valid])
    big = err > 3.0
    rel = err / gt_d[valid] > 0.05
    outlier = (big | rel) if rule == "any" else (big & rel)
    return float(err.mean()), float(outlier.mean())


# =============================================================================
# Inference
# =============================================================================
def predict_disparity(
    net: TwoInOneNet,
    left: np.ndarray,
    right: Optional[np.ndarray] = None,
    mode: str = "mono",
) -> np.ndarray:
    """(B, 3, H, W) -> (B, 1, H, W) disparity; mono uses the distilled branch."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    dt = np.dtype(net.config.dtype)
    with no_grad():
        img = Tensor(np.asarray(left, dtype=dt))
        if mode == "mono":
            v = net.forward_mono(img, net.mono_branch)
        else:
            if right is None:
                raise ValueError("stereo prediction needs a right image")
            v = net.forward_stereo(img, Tensor(np.asarray(right, dtype=dt))).v_left
        d = expected_disparity(ops.softmax_channel(v), net.levels)
    return d.data.astype(np.float64)


def evaluate_sample(
    pred_d: np.ndarray,
    sample: StereoSample,
    mode: str,
    cap: Optional[float] = None,
    median_scale: Optional[bool] = None,
    d1_rule: str = "any",
) -> MetricReport:
    """One report from a (1, H, W) predicted disparity against the sample's ground truth."""
    scale = (mode == "mono") if median_scale is None else median_scale
    pred_depth = sample.rig.bf / np.maximum(pred_d, 1e-12)
    report = depth_metrics(pred_depth, sample.depth(), cap=cap, median_scale=scale)
    epe, d1 = disparity_metrics(pred_d, sample.disparity, rule=d1_rule)
    return report.model_copy(update={"sample_id": sample.sample_id or "sample", "mode": mode, "epe": epe, "d1": d1})


def aggregate(reports: Sequence[MetricReport], mode: str) -> MetricReport:
    """Mean of per-sample metrics; n_pixels is the total."""
    rows = [r for r in reports if r.mode == mode]
    if not rows:
        raise NoValidPixelsError(f"no {mode} reports to aggregate")
    values: Dict[str, float] = {
        f: float(np.mean([getattr(r, f) for r in rows])) for f in _DEPTH_FIELDS + ("epe", "d1")
    }
    return MetricReport(sample_id="all", mode=mode, n_pixels=sum(r.n_pixels for r in rows), **values)


def evaluate_model(
    net: TwoInOneNet,
    samples: Iterable[StereoSample],
    modes: Sequence[str] = MODES,
    cap: Optional[float] = None,
    d1_rule: str = "any",
    batch_size: int = 4,
) -> List[MetricReport]:
    """Per-sample rows for every mode followed by one aggregate row per mode."""
    for m in modes:
        if m not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {m!r}")
    reports: List[MetricReport] = []
    buffer: List[StereoSample] = []

    def flush() -> None:
        if not buffer:
            return
        left = np.stack([s.left for s in buffer])
        right = np.stack([s.right for s in buffer])
        for m in modes:
            pred = predict_disparity(net, left, right, m)
            reports.extend(evaluate_sample(pred[i], s, m, cap=cap, d1_rule=d1_rule) for i, s in enumerate(buffer))
        buffer.clear()

    for sample in samples:
        buffer.append(sample)
        if len(buffer) == batch_size:
            flush()
    flush()
    if not reports:
        raise NoValidPixelsError("evaluation set is empty")

    per_sample = sorted(reports, key=lambda r: (MODES.index(r.mode), r.sample_id))
    summary = [aggregate(per_sample, m) for m in modes]
    for r in summary:
        log.info("%s: abs_rel=%.4f rmse=%.4f a1=%.4f epe=%.4f d1=%.4f", r.mode, r.abs_rel, r.rmse, r.a1, r.epe, r.d1)
    return per_sample + summary


# =============================================================================
# CSV
# =============================================================================
def write_reports(path: Union[str, Path], reports: Sequence[MetricReport]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([r.model_dump() for r in reports], columns=CSV_COLUMNS).to_csv(p, index=False)
    return p


def read_reports(path: Union[str, Path]) -> List[MetricReport]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"metrics csv not found: {p}")
    df = pd.read_csv(p, float_precision="round_trip", dtype={"sample_id": str, "mode": str})
    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{p}: missing columns {missing}")
    return [MetricReport(**row) for row in df[CSV_COLUMNS].to_dict(orient="records")]
