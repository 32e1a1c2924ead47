# app/engine/network.py
# =============================================================================
# TWO-IN-ONE DEPTH NETWORK
# -----------------------------------------------------------------------------
# - encoder แชร์น้ำหนักระหว่าง view ซ้าย/ขวา (4 stage, stride 2..16)
# - dual-path decoder:
#     mono   : agg3 -> agg2 -> agg1 -> decoder -> out_mono
#     stereo : agg3 [+MFM] -> agg2 [+MFM] -> agg1 [+MFM] -> decoder -> out_stereo
# - parameter groups: encoder / agg_blocks / decoder_block / mfm / out_mono / out_stereo
#   ชื่อ parameter = "group/block/param"
# =============================================================================
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core import ShapeMismatchError, Tensor, ops
from app.analysis.disparity import DisparityLevels
from app.analysis.warp import LEFT, RIGHT, shift_image_stack
from app.engine.layers import Conv2d, Module, SEConv

log = logging.getLogger(__name__)

__all__ = [
    "AUXILIARY",
    "FINAL",
    "GROUPS",
    "MATCHING_MODULES",
    "NetworkConfig",
    "StereoOutput",
    "Encoder",
    "SwitchableAggregationBlock",
    "DecoderBlock",
    "MatchingModule",
    "TwoInOneNet",
]

AUXILIARY = "auxiliary"
FINAL = "final"
GROUPS = ("encoder", "agg_blocks", "decoder_block", "mfm", "out_mono", "out_stereo")
MATCHING_MODULES = ("mfm", "attn", "cat")
STAGES = (3, 2, 1)  # aggregation stage s works at stride 2**s


@dataclass(frozen=True)
class NetworkConfig:
    encoder_widths: Tuple[int, int, int, int] = (16, 32, 64, 128)
    decoder_widths: Tuple[int, int, int] = (64, 32, 16)  # stage 3, 2, 1
    decoder_block_width: int = 16
    matching_module: str = "mfm"
    mfm_stages: Tuple[int, ...] = (3, 2, 1)
    se_reduction: int = 4
    use_final_branch: bool = True
    head_gain: float = 0.1
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if len(self.encoder_widths) != 4:
            raise ValueError(f"encoder needs exactly 4 widths, got {self.encoder_widths}")
        if len(self.decoder_widths) != 3:
            raise ValueError(f"decoder needs exactly 3 widths, got {self.decoder_widths}")
        if self.matching_module not in MATCHING_MODULES:
            raise ValueError(f"matching_module must be one of {MATCHING_MODULES}, got {self.matching_module!r}")
        bad = [s for s in self.mfm_stages if s not in STAGES]
        if bad:
            raise ValueError(f"mfm_stages must be a subset of {STAGES}, got {self.mfm_stages}")


@dataclass
class StereoOutput:
    v_left: Tensor
    v_right: Tensor
    costs_left: List[Tensor] = field(default_factory=list)   # coarsest stage first
    costs_right: List[Tensor] = field(default_factory=list)


# =============================================================================
# Blocks
# =============================================================================
class Encoder(Module):
    """Four (conv3x3 + ELU) ×2 + 2×2 average-pool stages."""

    def __init__(self, rng: np.random.Generator, widths: Sequence[int], dtype=np.float64) -> None:
        super().__init__()
        self.stages: List[Tuple[Conv2d, Conv2d]] = []
        c_in = 3
        for i, w in enumerate(widths, start=1):
            stage = self.add_child(f"stage{i}", Module())
            conv_a = stage.add_child("conv_a", Conv2d(rng, c_in, w, 3, dtype=dtype))
            conv_b = stage.add_child("conv_b", Conv2d(rng, w, w, 3, dtype=dtype))
            self.stages.append((conv_a, conv_b))
            c_in = w

    def __call__(self, img: Tensor) -> List[Tensor]:
        H, W = img.shape[-2:]
        if H % 16 or W % 16:
            raise ShapeMismatchError(f"encoder input {H}x{W} must be divisible by 16")
        feats = []
        x = img
        for conv_a, conv_b in self.stages:
            x = ops.elu(conv_b(ops.elu(conv_a(x))))
            x = ops.avg_pool2d(x, 2)
            feats.append(x)
        return feats


class SwitchableAggregationBlock(Module):
    """Upsample F_{i+1}, concat skip, shared fusion conv, then the selected branch conv."""

    def __init__(self, rng: np.random.Generator, in_next: int, in_skip: int, out: int, dtype=np.float64) -> None:
        super().__init__()
        self.fuse = self.add_child("fuse", Conv2d(rng, in_next + in_skip, out, 3, dtype=dtype))
        self.branches = {
            AUXILIARY: self.add_child("aux", Conv2d(rng, out, out, 3, dtype=dtype)),
            FINAL: self.add_child("final", Conv2d(rng, out, out, 3, dtype=dtype)),
        }

    def __call__(self, f_next: Tensor, skip: Tensor, branch: str = AUXILIARY) -> Tensor:
        if branch not in self.branches:
            raise ValueError(f"branch must be '{AUXILIARY}' or '{FINAL}', got {branch!r}")
        if (f_next.shape[2] * 2, f_next.shape[3] * 2) != tuple(skip.shape[2:]) or f_next.shape[0] != skip.shape[0]:
            raise ShapeMismatchError(
                f"aggregate: decoder feature {f_next.shape} is not at half the resolution of skip {skip.shape}"
            )
        x = ops.concat([ops.upsample2x(f_next), skip], axis=1)
        x = ops.elu(self.fuse(x))
        return ops.elu(self.branches[branch](x))


class DecoderBlock(Module):
    def __init__(self, rng: np.random.Generator, in_channels: int, out_channels: int, dtype=np.float64) -> None:
        super().__init__()
        self.conv_a = self.add_child("conv_a", Conv2d(rng, in_channels, out_channels, 3, dtype=dtype))
        self.conv_b = self.add_child("conv_b", Conv2d(rng, out_channels, out_channels, 3, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        x = ops.elu(self.conv_b(ops.elu(self.conv_a(x))))
        return ops.upsample2x(x)


class MatchingModule(Module):
    """
    Cross-view matching at one decoder stage.

    mfm  : Q/K 1×1 projections, shifted-key attention scores, SE-conv fusion of [A, F]
    attn : same cost volume, fused by a plain conv3x3 + ELU
    cat  : no cost volume; [F_self, F_other] fused by conv3x3 + ELU
    """

    def __init__(
        self,
        rng: np.random.Generator,
        channels: int,
        num_levels: int,
        variant: str = "mfm",
        reduction: int = 4,
        dtype=np.float64,
    ) -> None:
        super().__init__()
        self.variant = variant
        self.channels = channels
        if variant in ("mfm", "attn"):
            self.query = self.add_child("query", Conv2d(rng, channels, channels, 1, dtype=dtype))
            self.key = self.add_child("key", Conv2d(rng, channels, channels, 1, dtype=dtype))
        if variant == "mfm":
            self.fuse = self.add_child("fuse", SEConv(rng, num_levels + channels, channels, reduction, dtype=dtype))
        elif variant == "attn":
            self.fuse = self.add_child("fuse", Conv2d(rng, num_levels + channels, channels, 3, dtype=dtype))
        else:
            self.fuse = self.add_child("fuse", Conv2d(rng, 2 * channels, channels, 3, dtype=dtype))

    def cost_volume(self, f_self: Tensor, f_other: Tensor, levels: DisparityLevels, full_width: int, view: str) -> Tensor:
        """A = softmax_n( Σ_c Q ⊙ shift(K, b'_n) / √C ),  b'_n = (W'/W)·b_n"""
        B, C, h, w = f_self.shape
        q = self.query(f_self)
        k = self.key(f_other)
        scaled = levels.scaled(w / float(full_width))
        shifted = shift_image_stack(k, scaled, view)  # (B, N, C, h, w)
        scores = ops.sum(ops.mul(ops.reshape(q, (B, 1, C, h, w)), shifted), axis=2)
        return ops.softmax_channel(ops.div(scores, np.sqrt(C)))

    def __call__(
        self,
        f_self: Tensor,
        f_other: Tensor,
        levels: DisparityLevels,
        full_width: int,
        view: str = LEFT,
    ) -> Tuple[Optional[Tensor], Tensor]:
        if f_self.shape != f_other.shape:
            raise ShapeMismatchError(f"matching features differ in shape: {f_self.shape} vs {f_other.shape}")
        if self.variant == "cat":
            return None, ops.elu(self.fuse(ops.concat([f_self, f_other], axis=1)))
        attn = self.cost_volume(f_self, f_other, levels, full_width, view)
        fused = self.fuse(ops.concat([attn, f_self], axis=1))
        if self.variant == "attn":
            fused = ops.elu(fused)
        return attn, fused


# =============================================================================
# Network
# =============================================================================
class TwoInOneNet:
    """Monocular and binocular depth from one set of shared parameters."""

    def __init__(self, levels: DisparityLevels, config: Optional[NetworkConfig] = None) -> None:
        self.config = config or NetworkConfig()
        self.levels = levels
        cfg = self.config
        dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)
        n = levels.n
        enc_w = cfg.encoder_widths
        dec_w = cfg.decoder_widths

        self.encoder = Encoder(rng, enc_w, dtype)
        # stage 3: C4 (stride 16) + C3 (stride 8) ; stage 2: + C2 ; stage 1: + C1
        in_next = {3: enc_w[3], 2: dec_w[0], 1: dec_w[1]}
        in_skip = {3: enc_w[2], 2: enc_w[1], 1: enc_w[0]}
        out = {3: dec_w[0], 2: dec_w[1], 1: dec_w[2]}
        self.agg: Dict[int, SwitchableAggregationBlock] = {
            s: SwitchableAggregationBlock(rng, in_next[s], in_skip[s], out[s], dtype) for s in STAGES
        }
        self.decoder = DecoderBlock(rng, dec_w[2], cfg.decoder_block_width, dtype)
        self.matchers: Dict[int, MatchingModule] = {
            s: MatchingModule(rng, out[s], n, cfg.matching_module, cfg.se_reduction, dtype)
            for s in STAGES
            if s in cfg.mfm_stages
        }
        self.head_mono = Conv2d(rng, cfg.decoder_block_width, n, 3, dtype=dtype, gain=cfg.head_gain)
        self.head_stereo = Conv2d(rng, cfg.decoder_block_width, n, 3, dtype=dtype, gain=cfg.head_gain)

        self.groups: Dict[str, Dict[str, Module]] = {
            "encoder": dict(self.encoder._children),
            "agg_blocks": {f"agg{s}": self.agg[s] for s in STAGES},
            "decoder_block": {"decoder": self.decoder},
            "mfm": {f"mfm{s}": m for s, m in self.matchers.items()},
            "out_mono": {"head": self.head_mono},
            "out_stereo": {"head": self.head_stereo},
        }
        log.debug("built TwoInOneNet: %d parameters in %d tensors", self.num_parameters(), len(self.state_dict()))

    # ---- parameter bookkeeping ----
    def named_parameters(self, groups: Optional[Iterable[str]] = None) -> Dict[str, Tensor]:
        wanted = GROUPS if groups is None else tuple(groups)
        for g in wanted:
            if g not in self.groups:
                raise KeyError(f"unknown parameter group: {g!r}")
        out: Dict[str, Tensor] = {}
        for g in wanted:
            for block_name, block in self.groups[g].items():
                for pname, p in block.named_parameters():
                    out[f"{g}/{block_name}/{pname}"] = p
        return out

    def param_groups(self, groups: Iterable[str]) -> Dict[str, Dict[str, Tensor]]:
        return {g: self.named_parameters([g]) for g in groups}

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.named_parameters().values()))

    def set_trainable(self, groups: Iterable[str]) -> None:
        """requires_grad on for `groups`, off for every other group."""
        active = set(groups)
        for g in GROUPS:
            for p in self.named_parameters([g]).values():
                p.requires_grad = g in active
                p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeMismatchError(f"{name}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    @property
    def mono_branch(self) -> str:
        """Branch serving distilled monocular inference."""
        return FINAL if self.config.use_final_branch else AUXILIARY

    # ---- forward passes ----
    def encode(self, img: Tensor) -> List[Tensor]:
        return self.encoder(img)

    def aggregate(self, stage: int, f_next: Tensor, skip: Tensor, branch: str = AUXILIARY) -> Tensor:
        return self.agg[stage](f_next, skip, branch)

    def mfm_forward(
        self,
        stage: int,
        f_self: Tensor,
        f_other: Tensor,
        full_width: int,
        view: str = LEFT,
    ) -> Tuple[Optional[Tensor], Tensor]:
        return self.matchers[stage](f_self, f_other, self.levels, full_width, view)

    def forward_mono(self, img: Tensor, branch: str = AUXILIARY) -> Tensor:
        """(B, 3, H, W) -> logit volume (B, N, H, W)."""
        c = self.encode(img)
        f = c[3]
        for stage in STAGES:
            f = self.aggregate(stage, f, c[stage - 1], branch)
        return self.head_mono(self.decoder(f))

    def forward_stereo(self, left: Tensor, right: Tensor) -> StereoOutput:
        if left.shape != right.shape:
            raise ShapeMismatchError(f"stereo views differ in shape: {left.shape} vs {right.shape}")
        B = left.shape[0]
        W = left.shape[3]
        c = self.encode(ops.concat([left, right], axis=0))
        f = c[3]
        out = StereoOutput(v_left=None, v_right=None)  # type: ignore[arg-type]
        for stage in STAGES:
            f = self.aggregate(stage, f, c[stage - 1], AUXILIARY)
            if stage not in self.matchers:
                continue
            f_l, f_r = f[:B], f[B:]
            a_l, g_l = self.mfm_forward(stage, f_l, f_r, W, LEFT)
            a_r, g_r = self.mfm_forward(stage, f_r, f_l, W, RIGHT)
            f = ops.concat([g_l, g_r], axis=0)
            if a_l is not None:
                out.costs_left.append(a_l)
                out.costs_right.append(a_r)
        v = self.head_stereo(self.decoder(f))
        out.v_left, out.v_right = v[:B], v[B:]
        return out
