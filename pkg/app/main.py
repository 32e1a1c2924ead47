# app/main.py
# =============================================================================
# Command-line entrypoint
# -----------------------------------------------------------------------------
#   gen-data      สร้างชุดข้อมูล synthetic (train + val)
#   train         เทรน 3 step ตาม config (รองรับ --resume)
#   eval          วัดผล mono / stereo บน split ที่เก็บไว้ -> CSV
#   infer-mono    ภาพเดียว -> depth (.tiot + PNG 16-bit)
#   infer-stereo  คู่ภาพ   -> depth (.tiot + PNG 16-bit)
# error -> "error: ..." บน stderr, exit 1 ; usage ผิด -> exit 2 (argparse)
# =============================================================================
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.adapters.checkpoint_store import is_checkpoint, load_checkpoint
from app.adapters.sample_store import load_split, save_split
from app.adapters.synthetic_stereo import dataset
from app.analysis.disparity import CameraRig, DisparityLevels
from app.config.train_config import ConfigError, TrainConfig, load_config
from app.engine.network import TwoInOneNet
from app.services.evaluator import evaluate_model, predict_disparity, write_reports
from app.services.trainer import TioTrainer, build_network
from app.utils.image_io import read_image, write_depth_png
from app.utils.logging_tools import setup_logging
from app.utils.settings import get_settings
from app.utils.tensor_io import save_tensor

log = logging.getLogger("app.main")


# =============================================================================
# Helpers
# =============================================================================
def _parse_overrides(items: Optional[Sequence[str]]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _config(args: argparse.Namespace) -> TrainConfig:
    settings = get_settings()
    overrides = _parse_overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if settings.DATA_DIR:
        overrides.setdefault("data_dir", settings.DATA_DIR)
    if settings.CHECKPOINT_DIR:
        overrides.setdefault("checkpoint_dir", settings.CHECKPOINT_DIR)
    return load_config(
        getattr(args, "config", None),
        profile=getattr(args, "profile", None),
        overrides=overrides,
        profiles_path=settings.PROFILES_PATH,
    )


def load_network(checkpoint: str) -> Tuple[TwoInOneNet, TrainConfig]:
    ckpt = load_checkpoint(checkpoint)
    if ckpt.config is None:
        raise ConfigError(f"{checkpoint}: checkpoint has no config.json")
    net = build_network(ckpt.config, DisparityLevels(ckpt.levels))
    net.load_state_dict(ckpt.state)
    return net, ckpt.config


def _write_depth(out: str, depth: np.ndarray, cap: float) -> List[Path]:
    base = Path(out)
    if base.suffix in (".png", ".tiot"):
        base = base.with_suffix("")
    return [
        save_tensor(base.with_suffix(".tiot"), depth),
        write_depth_png(base.with_suffix(".png"), depth, cap),
    ]


def _batched(img: np.ndarray) -> np.ndarray:
    return img[None]


# =============================================================================
# Commands
# =============================================================================
def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _config(args)
    out = args.out or cfg.data_dir
    rig = CameraRig(cfg.baseline, cfg.focal_x)
    counts = {"train": args.count if args.count is not None else cfg.train_count,
              "val": args.val_count if args.val_count is not None else cfg.val_count}
    for split, count in counts.items():
        samples = dataset(
            count, cfg.seed, split, height=cfg.height, width=cfg.width, d_min=cfg.b_min, d_max=cfg.b_max, rig=rig
        )
        save_split(out, split, samples, previews=not args.no_previews)
    print(f"wrote {counts['train']} train / {counts['val']} val samples to {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config(args)
    ckpt_dir = Path(args.checkpoint or cfg.checkpoint_dir)
    data_dir = Path(args.data or cfg.data_dir)

    if args.resume:
        if not is_checkpoint(ckpt_dir):
            raise FileNotFoundError(f"nothing to resume at {ckpt_dir}")
        trainer = TioTrainer.from_checkpoint(load_checkpoint(ckpt_dir), cfg)
    else:
        trainer = TioTrainer(cfg)

    if (data_dir / "train").is_dir():
        samples = list(load_split(data_dir, "train"))
    else:
        log.info("no stored train split under %s; generating %d scenes", data_dir, cfg.train_count)
        samples = list(
            dataset(cfg.train_count, cfg.seed, "train", height=cfg.height, width=cfg.width,
                    d_min=cfg.b_min, d_max=cfg.b_max, rig=trainer.rig)
        )
    log.info("training %d parameters on %d samples (profile=%s)", trainer.net.num_parameters(), len(samples), cfg.profile)
    trainer.fit(samples, checkpoint_dir=ckpt_dir, log_csv=cfg.log_csv, progress=True)
    print(f"checkpoint: {ckpt_dir} (epoch {trainer.epoch})")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    net, cfg = load_network(args.checkpoint)
    samples = load_split(args.data, args.split)
    reports = evaluate_model(
        net, samples, modes=args.mode, cap=cfg.effective_depth_cap, d1_rule=cfg.d1_rule, batch_size=cfg.batch
    )
    path = write_reports(args.csv_out, reports)
    for r in reports:
        if r.sample_id == "all":
            print(f"{r.mode}: abs_rel={r.abs_rel:.4f} rmse={r.rmse:.4f} a1={r.a1:.4f} epe={r.epe:.4f} d1={r.d1:.4f}")
    print(f"metrics: {path}")
    return 0


def _infer(args: argparse.Namespace, mode: str) -> int:
    net, cfg = load_network(args.checkpoint)
    rig = CameraRig(cfg.baseline, cfg.focal_x)
    if mode == "mono":
        d = predict_disparity(net, _batched(read_image(args.image)), mode="mono")
    else:
        left, right = read_image(args.left), read_image(args.right)
        if left.shape != right.shape:
            raise ValueError(f"left {left.shape} and right {right.shape} images differ in size")
        d = predict_disparity(net, _batched(left), _batched(right), mode="stereo")
    depth = rig.bf / d[0]
    written = _write_depth(args.out, depth, cfg.effective_depth_cap)
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


def cmd_infer_mono(args: argparse.Namespace) -> int:
    return _infer(args, "mono")


def cmd_infer_stereo(args: argparse.Namespace) -> int:
    return _infer(args, "stereo")


# =============================================================================
# Parser
# =============================================================================
def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--profile", help="profile name in profiles.yaml (desk, full)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tio", description="Two-in-one self-supervised depth (desk scale)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic stereo splits")
    _add_config_flags(p)
    p.add_argument("--count", type=int, help="train samples (default: train_count)")
    p.add_argument("--val-count", type=int, help="val samples (default: val_count)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: data_dir)")
    p.add_argument("--no-previews", action="store_true", help="skip PNG previews")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run the three-step schedule")
    _add_config_flags(p)
    p.add_argument("--data", help="dataset directory (default: data_dir)")
    p.add_argument("--checkpoint", help="checkpoint directory (default: checkpoint_dir)")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics over a stored split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--mode", nargs="+", choices=["mono", "stereo"], default=["mono", "stereo"])
    p.add_argument("--csv-out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer-mono", help="depth from one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer_mono)

    p = sub.add_parser("infer-stereo", help="depth from a rectified pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer_stereo)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
