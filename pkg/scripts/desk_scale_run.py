#!/usr/bin/env python3
# =============================================================================
# Desk-scale end-to-end run
# -----------------------------------------------------------------------------
# 1) สร้าง train/val synthetic (ground plane + boxes, 64x128)
# 2) เทรน schedule เต็ม (steps 1+2+3) และ baseline step 1 อย่างเดียว
# 3) วัดผลบน val: stereo EPE, mono abs_rel (median scaling)
# 4) เช็ค gate: EPE < 1.0 px, abs_rel < 0.25, stereo EPE < mono EPE,
#    distillation ไม่ทำให้ mono abs_rel แย่ลงเกิน 5% เทียบ baseline
# ใช้: python scripts/desk_scale_run.py --out runs/desk [--epochs 15]
# =============================================================================
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from app.adapters.synthetic_stereo import dataset
from app.config.train_config import load_config
from app.schemas.metrics import MetricReport
from app.services.evaluator import evaluate_model, write_reports
from app.services.trainer import TioTrainer
from app.utils.logging_tools import setup_logging

log = logging.getLogger("desk_scale_run")

EPE_GATE = 1.0
ABS_REL_GATE = 0.25
DISTILL_TOLERANCE = 0.05


def _summary(reports: List[MetricReport]) -> Dict[str, MetricReport]:
    return {r.mode: r for r in reports if r.sample_id == "all"}


def _run(out: Path, steps: str, overrides: Dict[str, str], train, val) -> Dict[str, MetricReport]:
    extra = {"steps": steps, "checkpoint_dir": str(out / f"ckpt_{steps}")}
    cfg = load_config(profile="desk", overrides={**overrides, **extra})
    trainer = TioTrainer(cfg)
    t0 = time.time()
    trainer.fit(train, checkpoint_dir=cfg.checkpoint_dir, log_csv=out / f"loss_{steps}.csv", progress=True)
    log.info("steps=%s trained in %.1f min", steps, (time.time() - t0) / 60.0)
    reports = evaluate_model(trainer.net, val, cap=cfg.effective_depth_cap, d1_rule=cfg.d1_rule)
    write_reports(out / f"metrics_{steps}.csv", reports)
    return _summary(reports)


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--epochs", type=int, help="override epochs (E1/E2 kept from the profile)")
    ap.add_argument("--skip-baseline", action="store_true")
    args = ap.parse_args(argv)

    setup_logging()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    overrides: Dict[str, str] = {}
    if args.epochs is not None:
        overrides["epochs"] = str(args.epochs)

    cfg = load_config(profile="desk", overrides=overrides)
    train = list(dataset(cfg.train_count, cfg.seed, "train", height=cfg.height, width=cfg.width, d_min=cfg.b_min, d_max=cfg.b_max))
    val = list(dataset(cfg.val_count, cfg.seed, "val", height=cfg.height, width=cfg.width, d_min=cfg.b_min, d_max=cfg.b_max))

    full = _run(out, "1+2+3", overrides, train, val)
    checks = {
        f"stereo EPE {full['stereo'].epe:.3f} < {EPE_GATE}": full["stereo"].epe < EPE_GATE,
        f"mono abs_rel {full['mono'].abs_rel:.3f} < {ABS_REL_GATE}": full["mono"].abs_rel < ABS_REL_GATE,
        f"stereo EPE {full['stereo'].epe:.3f} < mono EPE {full['mono'].epe:.3f}": full["stereo"].epe < full["mono"].epe,
    }
    if not args.skip_baseline:
        base = _run(out, "1", overrides, train, val)
        limit = base["mono"].abs_rel * (1.0 + DISTILL_TOLERANCE)
        checks[f"distilled abs_rel {full['mono'].abs_rel:.3f} <= {limit:.3f}"] = full["mono"].abs_rel <= limit

    for name, ok in checks.items():
        print(("PASS " if ok else "FAIL ") + name)
    return 0 if all(checks.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
