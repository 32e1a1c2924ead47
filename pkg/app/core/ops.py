# app/core/ops.py
# =============================================================================
# LAYER: CORE / differentiable ops (forward + backward rule ต่อ op)
# -----------------------------------------------------------------------------
# - elementwise / reduce / shape ops
# - conv2d (im2col ผ่าน sliding_window_view + einsum)
# - softmax_channel, bilinear_sample, maxpool3x3_stride1, horizontal shifts
# ทุก op รับ/คืน Tensor; ค่าคงที่ (scalar / ndarray) ถูกห่อเป็น Tensor อัตโนมัติ
# =============================================================================
from __future__ import annotations

from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import (
    EmptyTensorError,
    NonFiniteError,
    ShapeMismatchError,
    Tensor,
    make_result,
)

ArrayLike = Union[Tensor, np.ndarray, float, int]
Axis = Optional[Union[int, Tuple[int, ...]]]

__all__ = [
    "as_tensor",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "absolute",
    "exp",
    "log",
    "sqrt",
    "power",
    "minimum_scalar",
    "clamp",
    "elu",
    "relu",
    "sigmoid",
    "reduce",
    "sum",
    "mean",
    "max",
    "reshape",
    "getitem",
    "concat",
    "stack",
    "take_hw",
    "pad2d",
    "flip_w",
    "conv2d",
    "avg_pool2d",
    "avg_pool3x3",
    "maxpool3x3_stride1",
    "softmax_channel",
    "channel_l2_norm",
    "bilinear_sample",
    "upsample2x",
    "horizontal_shift_matrices",
    "shift_channels",
    "shift_stack",
]


# =============================================================================
# Helpers
# =============================================================================
def as_tensor(x: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    """Wrap constants as untracked tensors (dtype follows `like` when given)."""
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `g` back down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    ta = a if isinstance(a, Tensor) else None
    tb = b if isinstance(b, Tensor) else None
    like = ta if ta is not None else tb
    a_t, b_t = as_tensor(a, like), as_tensor(b, like)
    try:
        np.broadcast_shapes(a_t.shape, b_t.shape)
    except ValueError:
        raise ShapeMismatchError(
            f"shapes {a_t.shape} and {b_t.shape} are not broadcast-compatible"
        ) from None
    return a_t, b_t


def _norm_axis(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeMismatchError(f"axis {ax} out of range for tensor with {ndim} dims")
        out.append(ax % ndim)
    return tuple(sorted(out))


# =============================================================================
# Binary elementwise
# =============================================================================
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    return make_result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    return make_result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    return make_result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def grad_fn(g: np.ndarray):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * out / b.data, b.shape)
        return ga, gb

    return make_result(out, (a, b), grad_fn)


# =============================================================================
# Unary elementwise
# =============================================================================
def neg(t: Tensor) -> Tensor:
    return make_result(-t.data, (t,), lambda g: (-g,))


def absolute(t: Tensor) -> Tensor:
    return make_result(np.abs(t.data), (t,), lambda g: (g * np.sign(t.data),))


def exp(t: Tensor) -> Tensor:
    out = np.exp(t.data)
    return make_result(out, (t,), lambda g: (g * out,))


def log(t: Tensor) -> Tensor:
    return make_result(np.log(t.data), (t,), lambda g: (g / t.data,))


def sqrt(t: Tensor) -> Tensor:
    out = np.sqrt(t.data)
    return make_result(out, (t,), lambda g: (g * 0.5 / out,))


def power(t: Tensor, p: float) -> Tensor:
    return make_result(t.data ** p, (t,), lambda g: (g * p * t.data ** (p - 1),))


def minimum_scalar(t: Tensor, c: float) -> Tensor:
    """min(t, c): grad ผ่านเฉพาะตำแหน่งที่ t < c"""
    keep = t.data < c
    return make_result(np.where(keep, t.data, c), (t,), lambda g: (g * keep,))


def clamp(t: Tensor, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    lo_v = -np.inf if lo is None else lo
    hi_v = np.inf if hi is None else hi
    inside = (t.data >= lo_v) & (t.data <= hi_v)
    return make_result(np.clip(t.data, lo_v, hi_v), (t,), lambda g: (g * inside,))


def elu(t: Tensor, alpha: float = 1.0) -> Tensor:
    pos = t.data > 0
    neg_part = alpha * (np.exp(np.minimum(t.data, 0.0)) - 1.0)
    out = np.where(pos, t.data, neg_part)
    return make_result(out, (t,), lambda g: (g * np.where(pos, 1.0, neg_part + alpha),))


def relu(t: Tensor) -> Tensor:
    pos = t.data > 0
    return make_result(t.data * pos, (t,), lambda g: (g * pos,))


def sigmoid(t: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-t.data))
    return make_result(out, (t,), lambda g: (g * out * (1.0 - out),))


_BINARY: Dict[str, Callable[[ArrayLike, ArrayLike], Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
}
_UNARY: Dict[str, Callable[..., Tensor]] = {
    "neg": neg,
    "abs": absolute,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "min_scalar": minimum_scalar,
    "clamp": clamp,
    "elu": elu,
    "relu": relu,
    "sigmoid": sigmoid,
}


def elementwise(kind: str, a: ArrayLike, b: Optional[ArrayLike] = None, **kwargs) -> Tensor:
    """Dispatch by op-kind name (add, sub, mul, div, abs, exp, log, min_scalar, clamp, ...)."""
    if kind in _BINARY:
        if b is None:
            raise ShapeMismatchError(f"elementwise '{kind}' needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        if kind == "min_scalar" and b is not None:
            return minimum_scalar(as_tensor(a), float(b))
        return _UNARY[kind](as_tensor(a), **kwargs)
    raise ValueError(f"unknown elementwise op-kind: {kind!r}")


# =============================================================================
# Reductions
# =============================================================================
def _check_nonempty(t: Tensor, what: str) -> None:
    if t.size == 0:
        raise EmptyTensorError(f"{what} over empty tensor of shape {t.shape}")


def sum(t: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    _check_nonempty(t, "sum")
    axes = _norm_axis(axis, t.ndim)
    out = t.data.sum(axis=axes, keepdims=keepdims)

    def grad_fn(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, t.shape).copy(),)

    return make_result(out, (t,), grad_fn)


def mean(t: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    _check_nonempty(t, "mean")
    axes = _norm_axis(axis, t.ndim)
    count = int(np.prod([t.shape[a] for a in axes])) if axes else 1
    out = t.data.mean(axis=axes, keepdims=keepdims)

    def grad_fn(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, t.shape).copy(),)

    return make_result(out, (t,), grad_fn)


def max(t: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Max reduction; tied maxima share the gradient equally."""
    _check_nonempty(t, "max")
    axes = _norm_axis(axis, t.ndim)
    kept = t.data.max(axis=axes, keepdims=True)
    out = kept if keepdims else np.squeeze(kept, axis=axes)

    def grad_fn(g: np.ndarray):
        if not keepdims:
            g = np.expand_dims(g, axes)
        hit = (t.data == kept).astype(t.data.dtype)
        hit /= hit.sum(axis=axes, keepdims=True)
        return (hit * g,)

    return make_result(out, (t,), grad_fn)


_REDUCE = {"sum": sum, "mean": mean, "max": max}


def reduce(kind: str, t: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    if kind not in _REDUCE:
        raise ValueError(f"unknown reduce op-kind: {kind!r}")
    return _REDUCE[kind](t, axis=axis, keepdims=keepdims)


# =============================================================================
# Shape ops
# =============================================================================
def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = t.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeMismatchError(f"cannot reshape {t.shape} into {tuple(shape)}") from None
    return make_result(out, (t,), lambda g: (g.reshape(t.shape),))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(Ellipsis), type(None))) for i in items)


def getitem(t: Tensor, idx) -> Tensor:
    out = t.data[idx]
    basic = _is_basic_index(idx)

    def grad_fn(g: np.ndarray):
        full = np.zeros_like(t.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_result(np.array(out, copy=True), (t,), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise EmptyTensorError("concat of an empty list")
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeMismatchError(f"concat along axis {axis}: {ref.shape} vs {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g: np.ndarray):
        return tuple(np.split(g, splits, axis=ax))

    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), grad_fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise EmptyTensorError("stack of an empty list")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeMismatchError(f"stack needs equal shapes: {shape} vs {t.shape}")
    ax = axis % (len(shape) + 1)

    def grad_fn(g: np.ndarray):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return make_result(np.stack([t.data for t in tensors], axis=ax), tuple(tensors), grad_fn)


def _scatter_last(g: np.ndarray, idx: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(g.shape[:-1] + (size,), dtype=g.dtype)
    np.add.at(out, (slice(None),) * (g.ndim - 1) + (idx,), g)
    return out


def take_hw(t: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Gather rows/cols of the last two axes (index maps for pads, crops, flips)."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    H, W = t.shape[-2:]
    out = np.take(np.take(t.data, cols, axis=-1), rows, axis=-2)

    def grad_fn(g: np.ndarray):
        g_rows = np.swapaxes(_scatter_last(np.swapaxes(g, -1, -2), rows, H), -1, -2)
        return (_scatter_last(g_rows, cols, W),)

    return make_result(out, (t,), grad_fn)


def pad2d(t: Tensor, pad: int, mode: str = "constant") -> Tensor:
    """Pad the last two axes by `pad` on every side (constant=0, edge, reflect)."""
    if pad == 0:
        return t
    H, W = t.shape[-2:]
    if mode == "constant":
        width = [(0, 0)] * (t.ndim - 2) + [(pad, pad), (pad, pad)]
        out = np.pad(t.data, width)
        return make_result(out, (t,), lambda g: (g[..., pad:pad + H, pad:pad + W].copy(),))
    if mode not in ("edge", "reflect"):
        raise ValueError(f"unknown pad mode: {mode!r}")
    rows = np.pad(np.arange(H), pad, mode=mode)
    cols = np.pad(np.arange(W), pad, mode=mode)
    return take_hw(t, rows, cols)


def flip_w(t: Tensor) -> Tensor:
    return make_result(t.data[..., ::-1].copy(), (t,), lambda g: (g[..., ::-1].copy(),))


# =============================================================================
# Convolution / pooling
# =============================================================================
def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlation on NCHW input with OIKhKw weights (im2col + einsum)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatchError(f"conv2d needs 4-D input and weight, got {x.shape} and {weight.shape}")
    B, C, H, W = x.shape
    O, Ci, kh, kw = weight.shape
    if C != Ci:
        raise ShapeMismatchError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (O,):
        raise ShapeMismatchError(f"conv2d bias shape {bias.shape} does not match {O} output channels")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeMismatchError(f"conv2d kernel {kh}x{kw} larger than padded input {xp.shape[2:]}")
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("bchwij,ocij->bohw", cols, weight.data, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    Ho, Wo = out.shape[2:]

    def grad_fn(g: np.ndarray):
        gw = np.einsum("bchwij,bohw->ocij", cols, g, optimize=True)
        gcols = np.einsum("bohw,ocij->bchwij", g, weight.data, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[..., i, j]
        gx = gxp[:, :, padding:padding + H, padding:padding + W]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, grad_fn)


def avg_pool2d(t: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k×k average pooling over the last two axes."""
    H, W = t.shape[-2:]
    if H % k or W % k:
        raise ShapeMismatchError(f"avg_pool2d: spatial size {(H, W)} not divisible by {k}")
    lead = t.shape[:-2]
    blocks = t.data.reshape(lead + (H // k, k, W // k, k))
    out = blocks.mean(axis=(-3, -1))

    def grad_fn(g: np.ndarray):
        return (np.repeat(np.repeat(g, k, axis=-2), k, axis=-1) / (k * k),)

    return make_result(out, (t,), grad_fn)


def _windows3x3(padded: Tensor, H: int, W: int) -> Tensor:
    return stack(
        [getitem(padded, (Ellipsis, slice(i, i + H), slice(j, j + W))) for i in range(3) for j in range(3)],
        axis=0,
    )


def avg_pool3x3(t: Tensor, pad_mode: str = "reflect") -> Tensor:
    """3×3 stride-1 mean filter, same-size output."""
    _check_nonempty(t, "avg_pool3x3")
    H, W = t.shape[-2:]
    return mean(_windows3x3(pad2d(t, 1, pad_mode), H, W), axis=0)


def maxpool3x3_stride1(t: Tensor) -> Tensor:
    """3×3 stride-1 max pooling with edge replication, same-size output."""
    _check_nonempty(t, "maxpool3x3_stride1")
    H, W = t.shape[-2:]
    return max(_windows3x3(pad2d(t, 1, "edge"), H, W), axis=0)


# =============================================================================
# Softmax / norms
# =============================================================================
def softmax_channel(v: Tensor, axis: int = 1) -> Tensor:
    if np.isnan(v.data).any():
        raise NonFiniteError(f"softmax_channel received NaN input of shape {v.shape}")
    shifted = v.data - v.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g: np.ndarray):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (v,), grad_fn)


def channel_l2_norm(t: Tensor, axis: int = 1) -> Tensor:
    """‖t‖₂ along `axis` (kept); gradient is 0 where the norm is 0."""
    n = np.sqrt((t.data ** 2).sum(axis=axis, keepdims=True))

    def grad_fn(g: np.ndarray):
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, g * t.data / safe, 0.0),)

    return make_result(n, (t,), grad_fn)


# =============================================================================
# Sampling
# =============================================================================
def _taps(coord: np.ndarray, size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Clamp coordinates and return (i0, i1, frac, inside) for linear interpolation."""
    c = np.clip(coord, 0.0, size - 1)
    if size == 1:
        i0 = np.zeros(c.shape, dtype=np.int64)
        return i0, i0, np.zeros_like(c), np.zeros(c.shape, dtype=bool)
    i0 = np.minimum(np.floor(c).astype(np.int64), size - 2)
    inside = (coord >= 0.0) & (coord <= size - 1)
    return i0, i0 + 1, c - i0, inside


def bilinear_sample(img: Tensor, x: ArrayLike, y: ArrayLike) -> Tensor:
    """
    Sample NCHW `img` at per-batch coordinates x, y of shape (B, Ho, Wo).
    Border-clamped; differentiable w.r.t. img and both coordinate tensors.
    """
    x_t = as_tensor(x, img)
    y_t = as_tensor(y, img)
    B, C, H, W = img.shape
    if x_t.shape != y_t.shape or x_t.ndim != 3 or x_t.shape[0] != B:
        raise ShapeMismatchError(
            f"bilinear_sample coordinates must be (B, Ho, Wo) with B={B}, got {x_t.shape} and {y_t.shape}"
        )
    x0, x1, wx, in_x = _taps(x_t.data, W)
    y0, y1, wy, in_y = _taps(y_t.data, H)
    bidx = np.arange(B)[:, None, None]
    full = (slice(None),)

    def gather(yy, xx):
        return np.moveaxis(img.data[bidx, :, yy, xx], -1, 1)

    v00, v01 = gather(y0, x0), gather(y0, x1)
    v10, v11 = gather(y1, x0), gather(y1, x1)
    wx_, wy_ = wx[:, None], wy[:, None]
    w00 = (1 - wx_) * (1 - wy_)
    w01 = wx_ * (1 - wy_)
    w10 = (1 - wx_) * wy_
    w11 = wx_ * wy_
    out = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11

    def grad_fn(g: np.ndarray):
        gimg = np.zeros_like(img.data)
        for yy, xx, w in ((y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)):
            np.add.at(gimg, (bidx,) + full + (yy, xx), np.moveaxis(g * w, 1, -1))
        dx = ((1 - wy_) * (v01 - v00) + wy_ * (v11 - v10))
        dy = ((1 - wx_) * (v10 - v00) + wx_ * (v11 - v01))
        gx = (g * dx).sum(axis=1) * in_x
        gy = (g * dy).sum(axis=1) * in_y
        return gimg, gx, gy

    return make_result(out, (img, x_t, y_t), grad_fn)


def upsample2x(t: Tensor) -> Tensor:
    """Bilinear ×2 upsampling with half-pixel centres."""
    B, _, H, W = t.shape
    ys = (np.arange(2 * H) + 0.5) / 2.0 - 0.5
    xs = (np.arange(2 * W) + 0.5) / 2.0 - 0.5
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    gx = np.broadcast_to(gx, (B, 2 * H, 2 * W)).astype(t.dtype)
    gy = np.broadcast_to(gy, (B, 2 * H, 2 * W)).astype(t.dtype)
    return bilinear_sample(t, gx, gy)


# =============================================================================
# Horizontal shifts (linear interpolation, border-clamped)
# =============================================================================
def horizontal_shift_matrices(offsets: Sequence[float], width: int, dtype=np.float64) -> np.ndarray:
    """
    M[k, v, w]: output column v reads input column w with weight M[k, v, w],
    sampling the input at v + offsets[k] (clamped to [0, width-1]).
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    src = np.arange(width)[None, :] + offsets[:, None]
    i0, i1, frac, _ = _taps(src, width)
    K = offsets.shape[0]
    M = np.zeros((K, width, width), dtype=dtype)
    kk = np.arange(K)[:, None]
    vv = np.arange(width)[None, :]
    M[kk, vv, i0] += 1.0 - frac
    M[kk, vv, i1] += frac
    return M


def shift_channels(t: Tensor, offsets: Sequence[float]) -> Tensor:
    """Channel n of (B, N, H, W) sampled at column x + offsets[n]."""
    if t.ndim != 4 or t.shape[1] != len(offsets):
        raise ShapeMismatchError(f"shift_channels: {len(offsets)} offsets for tensor of shape {t.shape}")
    M = horizontal_shift_matrices(offsets, t.shape[-1], t.dtype)
    MT = np.swapaxes(M, -1, -2)
    out = np.matmul(t.data, MT[None])
    return make_result(out, (t,), lambda g: (np.matmul(g, M[None]),))


def shift_stack(t: Tensor, offsets: Sequence[float]) -> Tensor:
    """(B, C, H, W) -> (B, K, C, H, W): copy k sampled at column x + offsets[k]."""
    if t.ndim != 4:
        raise ShapeMismatchError(f"shift_stack needs NCHW input, got {t.shape}")
    M = horizontal_shift_matrices(offsets, t.shape[-1], t.dtype)
    out = np.moveaxis(np.tensordot(t.data, M, axes=([3], [2])), 3, 1)

    def grad_fn(g: np.ndarray):
        return (np.tensordot(g, M, axes=([1, 4], [0, 1])),)

    return make_result(np.ascontiguousarray(out), (t,), grad_fn)


# =============================================================================
# Operator overloads
# =============================================================================
def _reflect(fn):
    return lambda self, other: fn(other, self)


Tensor.__add__ = add
Tensor.__radd__ = _reflect(add)
Tensor.__sub__ = sub
Tensor.__rsub__ = _reflect(sub)
Tensor.__mul__ = mul
Tensor.__rmul__ = _reflect(mul)
Tensor.__truediv__ = div
Tensor.__rtruediv__ = _reflect(div)
Tensor.__neg__ = neg
Tensor.__abs__ = absolute
Tensor.__getitem__ = getitem
Tensor.__pow__ = power
Tensor.sum = sum
Tensor.mean = mean
Tensor.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
