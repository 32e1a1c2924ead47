# app/services/trainer.py
# =============================================================================
# Multi-stage joint training
# -----------------------------------------------------------------------------
# ต่อ iteration รันตามลำดับ 1 -> 2 -> 3 (เฉพาะ step ที่ active ใน epoch นั้น)
#   step 1: mono (aux) self-supervised, discrete reconstruction   -> L_M
#   step 2: stereo path, teacher = aux mono (no grad)              -> L_S
#   step 3: distil hybrid/stereo volume into the mono branch       -> L_dis
# แต่ละ step มี Adam ของตัวเอง + freeze group ตาม STEP_GROUPS
# =============================================================================
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from app.adapters.checkpoint_store import Checkpoint, save_checkpoint
from app.analysis.disparity import CameraRig, DisparityLevels, disparity_to_depth, expected_disparity, make_levels
from app.analysis.masks import half_object_edge_map, occlusion_mask, opposite_occlusion_mask, out_of_view_mask
from app.analysis.warp import LEFT, RIGHT, continuous_reconstruct, discrete_reconstruct, shift_volume
from app.config.train_config import TrainConfig
from app.core import NonFiniteError, Tensor, backward, no_grad, ops
from app.engine.network import AUXILIARY, NetworkConfig, TwoInOneNet
from app.logic.losses import (
    FeatureExtractor,
    LossWeights,
    composite_target,
    cost_volume_loss,
    distill_loss,
    guidance_loss,
    hybrid_volume,
    mono_reconstruction_loss,
    mono_total,
    smoothness_loss,
    stereo_reconstruction_loss,
    stereo_total,
)
from app.schemas.sample import StereoSample
from app.services.augment import augment
from app.services.optimizer import Adam, build_param_groups
from app.services.schedule import STEP_GROUPS, StageSchedule, active_steps, learning_rate

log = logging.getLogger(__name__)

__all__ = [
    "LOG_COLUMNS",
    "StereoBatch",
    "collate",
    "build_levels",
    "network_config",
    "build_network",
    "loss_weights",
    "stage_schedule",
    "TioTrainer",
]

LOG_COLUMNS = ["epoch", "step_id", "loss_name", "value"]
STEP_LOSS = {1: "L_M", 2: "L_S", 3: "L_dis"}


# =============================================================================
# Builders (TrainConfig -> components)
# =============================================================================
def build_levels(cfg: TrainConfig) -> DisparityLevels:
    return make_levels(cfg.b_min, cfg.b_max, cfg.num_levels)


def network_config(cfg: TrainConfig) -> NetworkConfig:
    return NetworkConfig(
        encoder_widths=tuple(cfg.encoder_widths),
        decoder_widths=tuple(cfg.decoder_widths),
        decoder_block_width=cfg.decoder_block_width,
        matching_module=cfg.matching_module,
        mfm_stages=tuple(cfg.mfm_stages),
        # the final branch is only trained by distillation
        use_final_branch=cfg.use_final_branch and 3 in cfg.active_step_ids,
        seed=cfg.seed,
        dtype=cfg.dtype,
    )


def build_network(cfg: TrainConfig, levels: Optional[DisparityLevels] = None) -> TwoInOneNet:
    return TwoInOneNet(levels if levels is not None else build_levels(cfg), network_config(cfg))


def loss_weights(cfg: TrainConfig) -> LossWeights:
    return LossWeights(
        lambda1=cfg.lambda1,
        lambda2=cfg.lambda2,
        lambda3=cfg.lambda3,
        lambda4=cfg.lambda4,
        alpha=cfg.alpha,
        beta=cfg.beta,
        gamma=cfg.gamma,
        t1=cfg.t1,
        t2=cfg.t2,
    )


def stage_schedule(cfg: TrainConfig) -> StageSchedule:
    return StageSchedule(
        e1=cfg.e1,
        e2=cfg.e2,
        total_epochs=cfg.epochs,
        lr_base=cfg.lr,
        lr_halving_epochs=tuple(cfg.lr_halving_epochs),
        revisit_factor=cfg.revisit_factor,
        max_step=max(cfg.active_step_ids),
    )


# =============================================================================
# Batch
# =============================================================================
@dataclass
class StereoBatch:
    left: np.ndarray        # (B, 3, H, W)
    right: np.ndarray       # (B, 3, H, W)
    disparity: np.ndarray   # (B, 1, H, W)
    validity: np.ndarray    # (B, 1, H, W)

    @property
    def size(self) -> int:
        return int(self.left.shape[0])


def collate(samples: Sequence[StereoSample], dtype: Union[str, np.dtype] = "float64") -> StereoBatch:
    if not samples:
        raise ValueError("cannot collate an empty batch")
    shapes = {s.left.shape for s in samples}
    if len(shapes) != 1:
        raise ValueError(f"samples in a batch must share one size, got {sorted(shapes)}")
    dt = np.dtype(dtype)
    return StereoBatch(
        left=np.stack([s.left for s in samples]).astype(dt),
        right=np.stack([s.right for s in samples]).astype(dt),
        disparity=np.stack([s.disparity for s in samples]).astype(dt),
        validity=np.stack([s.validity for s in samples]).astype(dt),
    )


# =============================================================================
# Trainer
# =============================================================================
class TioTrainer:
    def __init__(self, cfg: TrainConfig, net: Optional[TwoInOneNet] = None) -> None:
        self.cfg = cfg
        self.net = net if net is not None else build_network(cfg)
        self.levels = self.net.levels
        self.rig = CameraRig(cfg.baseline, cfg.focal_x)
        self.weights = loss_weights(cfg)
        self.schedule = stage_schedule(cfg)
        self.extractor = FeatureExtractor(seed=cfg.seed)
        self.optimizers: Dict[int, Adam] = {
            k: Adam(
                build_param_groups(self.net.param_groups(STEP_GROUPS[k]), cfg.lr),
                beta1=cfg.adam_beta1,
                beta2=cfg.adam_beta2,
            )
            for k in (1, 2, 3)
        }
        self.epoch = 0
        self.last_terms: Dict[int, Dict[str, float]] = {}
        self.history: List[Dict] = []

    # ---- resume ----
    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, cfg: Optional[TrainConfig] = None) -> "TioTrainer":
        config = cfg or ckpt.config
        if config is None:
            raise ValueError("checkpoint carries no config.json; pass a TrainConfig")
        levels = DisparityLevels(ckpt.levels)
        trainer = cls(config, build_network(config, levels))
        trainer.net.load_state_dict(ckpt.state)
        for k, flat in ckpt.optim.items():
            trainer.optimizers[k].load_state_dict(flat, updates=ckpt.optim_updates(k))
        trainer.epoch = ckpt.epoch
        log.info("resumed from epoch %d", trainer.epoch)
        return trainer

    def save(self, directory: Union[str, Path]) -> Path:
        return save_checkpoint(
            directory,
            self.net.state_dict(),
            self.levels.values,
            epoch=self.epoch,
            config=self.cfg,
            optim={k: opt.state_dict() for k, opt in self.optimizers.items() if opt.state},
            optim_updates={k: opt.updates for k, opt in self.optimizers.items()},
        )

    # ---- helpers ----
    def _tensors(self, batch: StereoBatch):
        dt = np.dtype(self.net.config.dtype)
        return Tensor(batch.left.astype(dt)), Tensor(batch.right.astype(dt))

    def _mono_loss(self, v_src: Tensor, img_src: Tensor, img_target: Tensor, view: str) -> Tensor:
        """Rebuild `img_target` from the other view with that view's shifted logit volume."""
        p_hat = ops.softmax_channel(shift_volume(v_src, self.levels, view))
        rec = discrete_reconstruct(p_hat, img_src, self.levels, view)
        rec1 = mono_reconstruction_loss(rec.img, img_target, self.extractor, self.weights.beta)
        smo1 = smoothness_loss(expected_disparity(p_hat, self.levels), img_target, self.weights.gamma)
        return mono_total(rec1, smo1, self.weights)

    def _apply(self, step_id: int, loss: Tensor, terms: Dict[str, float]) -> float:
        value = float(loss.item())
        if not np.isfinite(value):
            raise NonFiniteError(f"step {step_id} loss is not finite at epoch {self.epoch}: {value}")
        backward(loss)
        opt = self.optimizers[step_id]
        opt.step(learning_rate(self.epoch, step_id, self.schedule))
        opt.zero_grad()
        terms[STEP_LOSS[step_id]] = value
        self.last_terms[step_id] = terms
        return value

    # ---- step 1 ----
    def step1_update(self, batch: StereoBatch) -> float:
        self.net.set_trainable(STEP_GROUPS[1])
        left, right = self._tensors(batch)
        B = batch.size
        v = self.net.forward_mono(ops.concat([left, right], axis=0), AUXILIARY)
        v_left, v_right = v[:B], v[B:]
        loss_left = self._mono_loss(v_right, right, left, LEFT)
        loss_right = self._mono_loss(v_left, left, right, RIGHT)
        loss = ops.mul(0.5, ops.add(loss_left, loss_right))
        return self._apply(1, loss, {})

    # ---- step 2 ----
    def step2_update(self, batch: StereoBatch) -> float:
        cfg, w = self.cfg, self.weights
        self.net.set_trainable(STEP_GROUPS[2])
        left, right = self._tensors(batch)

        with no_grad():
            p_aux = ops.softmax_channel(self.net.forward_mono(left, AUXILIARY))
            d_aux = expected_disparity(p_aux, self.levels)
            warped_aux = continuous_reconstruct(right, disparity_to_depth(d_aux, self.rig), self.rig, LEFT).img
            m_occ = occlusion_mask(d_aux) if cfg.use_occlusion_mask else np.ones(d_aux.shape)
            m_out = out_of_view_mask(d_aux, LEFT)

        out = self.net.forward_stereo(left, right)
        p_s = ops.softmax_channel(out.v_left)
        d_s = expected_disparity(p_s, self.levels)
        rec = continuous_reconstruct(right, disparity_to_depth(d_s, self.rig), self.rig, LEFT)
        target = composite_target(left, warped_aux, m_occ)

        terms: Dict[str, float] = {}
        rec2 = stereo_reconstruction_loss(rec.img, target, w.alpha)
        smo2 = smoothness_loss(d_s, left, w.gamma)
        cos: Union[Tensor, float] = 0.0
        if out.costs_left and w.lambda3 > 0:
            cos = cost_volume_loss(out.costs_left, p_aux, w.t1)
            terms["L_cos"] = float(cos.item())
        gui: Union[Tensor, float] = 0.0
        if w.lambda4 > 0:
            gui = guidance_loss(d_aux, d_s, m_out)
            terms["L_gui"] = float(gui.item())
        terms["L_rec2"] = float(rec2.item())
        terms["L_smo2"] = float(smo2.item())
        loss = stereo_total(rec2, smo2, cos, gui, w)
        return self._apply(2, loss, terms)

    # ---- step 3 ----
    def distillation_target(self, left: Tensor, right: Tensor) -> Tensor:
        """Teacher volume for step 3 (no gradient)."""
        with no_grad():
            p_s = ops.softmax_channel(self.net.forward_stereo(left, right).v_left)
            if self.cfg.distill_target == "stereo":
                return p_s
            p_aux = ops.softmax_channel(self.net.forward_mono(left, AUXILIARY))
            d_s = expected_disparity(p_s, self.levels)
            m_hoe = half_object_edge_map(
                disparity_to_depth(d_s, self.rig), opposite_occlusion_mask(d_s), self.weights.t2
            )
            return hybrid_volume(p_s, p_aux, m_hoe)

    def step3_update(self, batch: StereoBatch) -> float:
        self.net.set_trainable(STEP_GROUPS[3])
        left, right = self._tensors(batch)
        teacher = self.distillation_target(left, right)
        p_m = ops.softmax_channel(self.net.forward_mono(left, self.net.mono_branch))
        return self._apply(3, distill_loss(teacher, p_m), {})

    def update(self, step_id: int, batch: StereoBatch) -> float:
        return {1: self.step1_update, 2: self.step2_update, 3: self.step3_update}[step_id](batch)

    # ---- epochs ----
    def train_epoch(self, samples: Sequence[StereoSample], epoch: Optional[int] = None) -> Dict[int, float]:
        """One pass over `samples`; returns the mean loss per active step."""
        cfg = self.cfg
        if epoch is not None:
            self.epoch = epoch
        if not samples:
            raise ValueError("training set is empty")
        rng = np.random.default_rng([cfg.seed, self.epoch])
        order = rng.permutation(len(samples))
        steps = active_steps(self.epoch, self.schedule)
        per_step: Dict[int, List[float]] = {k: [] for k in steps}
        per_term: Dict[tuple, List[float]] = {}

        for start in range(0, len(order), cfg.batch):
            chosen = [
                augment(samples[i], rng, (cfg.height, cfg.width), tuple(cfg.scale_range), cfg.flip_prob, cfg.color_jitter)
                for i in order[start : start + cfg.batch]
            ]
            batch = collate(chosen, cfg.dtype)
            for k in steps:
                per_step[k].append(self.update(k, batch))
                for name, value in self.last_terms[k].items():
                    per_term.setdefault((k, name), []).append(value)
            log.debug("epoch %d iter %d: %s", self.epoch, start // cfg.batch, {k: v[-1] for k, v in per_step.items()})

        means = {k: float(np.mean(v)) for k, v in per_step.items()}
        for (k, name), values in sorted(per_term.items()):
            self.history.append({"epoch": self.epoch, "step_id": k, "loss_name": name, "value": float(np.mean(values))})
        for k in steps:
            lrs = learning_rate(self.epoch, k, self.schedule)
            log.info(
                "epoch %d step %d: %s=%.6f lr=%s",
                self.epoch, k, STEP_LOSS[k], means[k], {g: f"{v:.2e}" for g, v in lrs.items()},
            )
        self.epoch += 1
        return means

    def loss_log(self) -> pd.DataFrame:
        return pd.DataFrame(self.history, columns=LOG_COLUMNS)

    def write_loss_log(self, path: Union[str, Path], append: bool = False, since: int = 0) -> Path:
        """Write history rows from index `since` on; `append` adds them to an existing file."""
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        df = pd.DataFrame(self.history[since:], columns=LOG_COLUMNS)
        if append and p.exists():
            df.to_csv(p, mode="a", header=False, index=False)
        else:
            df.to_csv(p, index=False)
        return p

    def fit(
        self,
        samples: Sequence[StereoSample],
        *,
        checkpoint_dir: Optional[Union[str, Path]] = None,
        log_csv: Optional[Union[str, Path]] = None,
        progress: bool = False,
    ) -> pd.DataFrame:
        """Train from `self.epoch` up to cfg.epochs, checkpointing after every epoch."""
        resumed = self.epoch > 0
        for _ in tqdm(range(self.epoch, self.cfg.epochs), desc="train", disable=not progress):
            since = len(self.history)
            self.train_epoch(samples)
            if checkpoint_dir is not None:
                self.save(checkpoint_dir)
            if log_csv is not None:
                self.write_loss_log(log_csv, append=resumed, since=since)
                resumed = True
        return pd.read_csv(log_csv) if log_csv is not None and Path(log_csv).exists() else self.loss_log()
