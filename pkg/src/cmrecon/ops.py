"""Differentiable operations on 4-D tensors.

Every op follows the same pattern: validate shapes, compute the forward
value with vectorized numpy, and, when any input is tracked on a graph,
record a backward closure over the activations it needs. Convolutions use
im2col gathers backed by BLAS matmuls, with the matching col2im scatter in
backward; conv_transpose2d is the exact adjoint (scatter forward, gather
backward), which is what makes the inner-product adjointness identity hold
to roundoff.

Elementwise ops require equal shapes. Broadcasting exists only through the
explicit ops add_bc / mul_bc, whose second argument may have size-1 dims
(per-channel gates (n,c,1,1), spatial gates (n,1,h,w), per-item scalars).
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import GradGraph, ShapeError, Tensor, result_graph
from .rng import RngStream

TRAIN = "train"
EVAL = "eval"


def _out(graph: GradGraph | None, data, parents, backward) -> Tensor:
    if graph is None:
        return Tensor(data)
    return graph.record(data, parents, backward)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise suite


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    g = result_graph((a, b))
    return _out(g, a.data + b.data, (a, b), lambda grad: (grad, grad))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    g = result_graph((a, b))
    return _out(g, a.data - b.data, (a, b), lambda grad: (grad, -grad))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of equal-shaped tensors."""
    _same_shape(a, b, "mul")
    g = result_graph((a, b))
    ad, bd = a.data, b.data
    return _out(g, ad * bd, (a, b), lambda grad: (grad * bd, grad * ad))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    g = result_graph((a,))
    return _out(g, a.data * s, (a,), lambda grad: (grad * s,))


def shift(a: Tensor, s: float) -> Tensor:
    s = float(s)
    g = result_graph((a,))
    return _out(g, a.data + s, (a,), lambda grad: (grad,))


def relu(a: Tensor) -> Tensor:
    g = result_graph((a,))
    mask = a.data > 0.0
    return _out(g, np.where(mask, a.data, 0.0), (a,), lambda grad: (grad * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp may overflow for very negative x; 1/inf -> 0 is the right limit
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(a: Tensor) -> Tensor:
    g = result_graph((a,))
    y = _sigmoid(a.data)
    return _out(g, y, (a,), lambda grad: (grad * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    g = result_graph((a,))
    y = np.exp(a.data)
    return _out(g, y, (a,), lambda grad: (grad * y,))


def sqrt(a: Tensor) -> Tensor:
    g = result_graph((a,))
    y = np.sqrt(a.data)
    # max() keeps 0 * upstream-0 from turning into nan at y == 0
    return _out(g, y, (a,), lambda grad: (grad * 0.5 / np.maximum(y, 1e-300),))


def reciprocal(a: Tensor) -> Tensor:
    g = result_graph((a,))
    y = 1.0 / a.data
    return _out(g, y, (a,), lambda grad: (-grad * y * y,))


def _bc_check(a: Tensor, b: Tensor, op: str):
    for axis, (da, db) in enumerate(zip(a.shape, b.shape)):
        if db != da and db != 1:
            raise ShapeError(
                f"{op}: dim {axis} of {b.shape} must be 1 or match {a.shape}")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        return grad.sum(axis=axes, keepdims=True)
    return grad


def add_bc(a: Tensor, b: Tensor) -> Tensor:
    """a + b with b broadcast over size-1 dims (per-channel/per-item shifts)."""
    _bc_check(a, b, "add_bc")
    g = result_graph((a, b))
    bshape = b.shape
    return _out(g, a.data + b.data, (a, b),
                lambda grad: (grad, _reduce_to(grad, bshape)))


def mul_bc(a: Tensor, b: Tensor) -> Tensor:
    """a * b with b broadcast over size-1 dims; the explicit gating op."""
    _bc_check(a, b, "mul_bc")
    g = result_graph((a, b))
    ad, bd, bshape = a.data, b.data, b.shape
    return _out(g, ad * bd, (a, b),
                lambda grad: (grad * bd, _reduce_to(grad * ad, bshape)))


def scale_channels(x: Tensor, gate: Tensor) -> Tensor:
    """Per-channel rescaling by an (n, c, 1, 1) gate."""
    n, c = x.shape[0], x.shape[1]
    if gate.shape != (n, c, 1, 1):
        raise ShapeError(f"scale_channels: gate shape {gate.shape} != {(n, c, 1, 1)}")
    return mul_bc(x, gate)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_channels: need at least one tensor")
    n, _, h, w = parts[0].shape
    for t in parts[1:]:
        if t.shape[0] != n or t.shape[2] != h or t.shape[3] != w:
            raise ShapeError(
                f"concat_channels: {t.shape} incompatible with {(n, '*', h, w)}")
    g = result_graph(parts)
    data = np.concatenate([t.data for t in parts], axis=1)
    widths = [t.shape[1] for t in parts]
    edges = np.cumsum([0] + widths)

    def backward(grad):
        return tuple(grad[:, edges[i]:edges[i + 1]] for i in range(len(widths)))

    return _out(g, data, tuple(parts), backward)


# ---------------------------------------------------------------------------
# reductions


def _sum_axes(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    g = result_graph((a,))
    data = a.data.sum(axis=axes, keepdims=True)
    shape = a.shape
    return _out(g, data, (a,), lambda grad: (np.broadcast_to(grad, shape),))


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements as a (1,1,1,1) tensor."""
    return _sum_axes(a, (0, 1, 2, 3))


def tmean(a: Tensor) -> Tensor:
    return scale(tsum(a), 1.0 / a.size)


def tvar(a: Tensor) -> Tensor:
    """Population variance of all elements (divide by N)."""
    d = add_bc(a, scale(tmean(a), -1.0))
    return tmean(mul(d, d))


def batch_sum(a: Tensor) -> Tensor:
    """Per-item sum over (c, h, w); result (n, 1, 1, 1)."""
    return _sum_axes(a, (1, 2, 3))


def global_avg_pool(a: Tensor) -> Tensor:
    """Per-channel spatial mean; result (n, c, 1, 1)."""
    n, c, h, w = a.shape
    return scale(_sum_axes(a, (2, 3)), 1.0 / (h * w))


def channel_mean_map(a: Tensor) -> Tensor:
    """Mean over channels; result (n, 1, h, w)."""
    return scale(_sum_axes(a, (1,)), 1.0 / a.shape[1])


def global_max_pool(a: Tensor) -> Tensor:
    """Per-channel spatial max; subgradient goes to the first argmax in
    row-major scan order."""
    n, c, h, w = a.shape
    g = result_graph((a,))
    flat = a.data.reshape(n, c, h * w)
    am = flat.argmax(axis=2)
    out = np.take_along_axis(flat, am[..., None], axis=2).reshape(n, c, 1, 1)

    def backward(grad):
        gz = np.zeros((n, c, h * w))
        np.put_along_axis(gz, am[..., None], grad.reshape(n, c, 1), axis=2)
        return (gz.reshape(n, c, h, w),)

    return _out(g, out, (a,), backward)


def channel_max_map(a: Tensor) -> Tensor:
    """Max over channels; result (n, 1, h, w); first-channel wins ties."""
    g = result_graph((a,))
    am = a.data.argmax(axis=1)
    out = np.take_along_axis(a.data, am[:, None], axis=1)
    shape = a.shape

    def backward(grad):
        gz = np.zeros(shape)
        np.put_along_axis(gz, am[:, None], grad, axis=1)
        return (gz,)

    return _out(g, out, (a,), backward)


# ---------------------------------------------------------------------------
# structural layers


def max_pool2(a: Tensor) -> Tensor:
    """2x2 max pooling; gradient routed to the first max in row-major window
    order on ties."""
    n, c, h, w = a.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2: spatial dims must be even, got h={h}, w={w}")
    g = result_graph((a,))
    h2, w2 = h // 2, w // 2
    win = a.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    am = win.argmax(axis=-1)
    out = np.take_along_axis(win, am[..., None], axis=-1)[..., 0]

    def backward(grad):
        gz = np.zeros((n, c, h2, w2, 4))
        np.put_along_axis(gz, am[..., None], grad[..., None], axis=-1)
        gx = gz.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return _out(g, out, (a,), backward)


def dropout(a: Tensor, p: float, mode: str, rng: RngStream | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p) at train time, identity
    in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode == EVAL or p == 0.0:
        g = result_graph((a,))
        return _out(g, a.data.copy(), (a,), lambda grad: (grad,))
    if mode != TRAIN:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ValueError("dropout in train mode needs an RngStream")
    g = result_graph((a,))
    mask = (rng.uniform(a.shape) >= p) / (1.0 - p)
    return _out(g, a.data * mask, (a,), lambda grad: (grad * mask,))


def _nchw_to_cN(a: np.ndarray) -> np.ndarray:
    """(n,c,h,w) -> contiguous (c, n*h*w); inner copy runs along stride-1 w."""
    n, c, h, w = a.shape
    return np.ascontiguousarray(a.transpose(1, 0, 2, 3)).reshape(c, n * h * w)


def _cN_to_nchw(a: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(a.reshape(-1, n, h, w).transpose(1, 0, 2, 3))


def _conv_cols(xp: np.ndarray, kh: int, kw: int, stride: int):
    """im2col, channel-kernel-major: padded (n,c,H,W) -> (c*kh*kw, n*oh*ow).

    The output's inner axis walks the stride-1 input axis, so the gather copy
    moves whole rows at a time.
    """
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow = v.shape[:4]
    cols = np.ascontiguousarray(v.transpose(1, 4, 5, 0, 2, 3))
    return cols.reshape(c * kh * kw, n * oh * ow), oh, ow


def _col_scatter(cols: np.ndarray, n: int, c: int, H: int, W: int,
                 kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """col2im: channel-kernel-major (c*kh*kw, n*oh*ow) -> (n,c,H,W) by
    strided slice-adds with contiguous sources."""
    t = cols.reshape(c, kh, kw, n, oh, ow)
    out = np.zeros((c, n, H, W))
    for a in range(kh):
        for b in range(kw):
            out[:, :, a:a + stride * oh:stride, b:b + stride * ow:stride] += t[:, a, b]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation; weight (out_c, in_c, kh, kw), bias (1, out_c, 1, 1)."""
    n, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    if ic != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {ic}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel dims must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d: padding must be >= 0, got {padding}")
    if bias is not None and bias.shape != (1, oc, 1, 1):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != {(1, oc, 1, 1)}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input "
                         f"{h + 2 * padding}x{w + 2 * padding}")

    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = _nchw_to_cN(x.data)  # im2col of a 1x1 kernel is a reshape
        oh, ow = h, w
    else:
        xp = np.pad(x.data,
                    ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
            if padding else x.data
        cols, oh, ow = _conv_cols(xp, kh, kw, stride)
    w2 = weight.data.reshape(oc, -1)
    outT = w2 @ cols
    if bias is not None:
        outT += bias.data.reshape(oc, 1)
    out = _cN_to_nchw(outT, n, oh, ow)

    parents = (x, weight) if bias is None else (x, weight, bias)
    g = result_graph(parents)
    if g is None:
        return Tensor(out)
    need_x = x.tracked

    def backward(grad):
        gT = _nchw_to_cN(grad)
        grad_w = (gT @ cols.T).reshape(oc, ic, kh, kw)
        if not need_x:
            gx = None
        elif pointwise:
            gx = _cN_to_nchw(w2.T @ gT, n, h, w)
        else:
            H, W = h + 2 * padding, w + 2 * padding
            gx_pad = _col_scatter(w2.T @ gT, n, c, H, W, kh, kw, stride, oh, ow)
            gx = gx_pad[:, :, padding:H - padding, padding:W - padding] \
                if padding else gx_pad
        if bias is None:
            return gx, grad_w
        return gx, grad_w, grad.sum(axis=(0, 2, 3)).reshape(1, oc, 1, 1)

    return g.record(out, parents, backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 2) -> Tensor:
    """Transposed convolution; weight (in_c, out_c, kh, kw).

    Forward is the adjoint scatter of conv2d's gather, so for stride 1 and no
    padding, <conv2d(x, K), y> == <x, conv_transpose2d(y, K)> with the same
    kernel array.
    """
    n, c, h, w = x.shape
    ic, oc, kh, kw = weight.shape
    if ic != c:
        raise ShapeError(f"conv_transpose2d: input has {c} channels but weight expects {ic}")
    if stride < 1:
        raise ValueError(f"conv_transpose2d: stride must be >= 1, got {stride}")
    if bias is not None and bias.shape != (1, oc, 1, 1):
        raise ShapeError(f"conv_transpose2d: bias shape {bias.shape} != {(1, oc, 1, 1)}")

    H = stride * (h - 1) + kh
    W = stride * (w - 1) + kw
    xT = _nchw_to_cN(x.data)
    w2 = weight.data.reshape(ic, oc * kh * kw)
    out = _col_scatter(w2.T @ xT, n, oc, H, W, kh, kw, stride, h, w)
    if bias is not None:
        out += bias.data

    parents = (x, weight) if bias is None else (x, weight, bias)
    g = result_graph(parents)
    if g is None:
        return Tensor(out)
    need_x = x.tracked

    def backward(grad):
        gcols, _, _ = _conv_cols(grad, kh, kw, stride)
        gx = _cN_to_nchw(w2 @ gcols, n, h, w) if need_x else None
        grad_w = (xT @ gcols.T).reshape(ic, oc, kh, kw)
        if bias is None:
            return gx, grad_w
        return gx, grad_w, grad.sum(axis=(0, 2, 3)).reshape(1, oc, 1, 1)

    return g.record(out, parents, backward)


class RunningStats:
    """Per-channel running mean/var for batch norm; population convention."""

    def __init__(self, channels: int):
        self.channels = channels
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.initialized = False

    def init_identity(self):
        self.mean = np.zeros(self.channels)
        self.var = np.ones(self.channels)
        self.initialized = True

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray, momentum: float):
        self.mean = (1.0 - momentum) * self.mean + momentum * batch_mean
        self.var = (1.0 - momentum) * self.var + momentum * batch_var
        self.initialized = True


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats,
                 mode: str, momentum: float = 0.1, eps: float = 1e-5,
                 update_stats: bool = True) -> Tensor:
    """Batch normalization over (n, h, w) per channel.

    Train mode normalizes with batch statistics (population variance) and,
    unless update_stats is False, folds them into the running stats. Eval
    mode uses the running stats, which must have been initialized.
    """
    n, c, h, w = x.shape
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise ShapeError(f"batch_norm2d: gamma/beta must be {(1, c, 1, 1)}, "
                         f"got {gamma.shape} and {beta.shape}")
    if stats.channels != c:
        raise ShapeError(f"batch_norm2d: stats track {stats.channels} channels, input has {c}")
    if eps <= 0:
        raise ValueError(f"batch_norm2d: eps must be > 0, got {eps}")
    g = result_graph((x, gamma, beta))

    if mode == TRAIN:
        m = n * h * w
        mean = x.data.mean(axis=(0, 2, 3))
        xc = x.data - mean.reshape(1, c, 1, 1)
        var = (xc * xc).mean(axis=(0, 2, 3))
        if update_stats:
            stats.update(mean, var, momentum)
        ist = 1.0 / np.sqrt(var + eps).reshape(1, c, 1, 1)
        xh = xc * ist
        out = gamma.data * xh + beta.data
        gam = gamma.data

        def backward(grad):
            dxh = grad * gam
            s1 = dxh.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxh * xh).sum(axis=(0, 2, 3), keepdims=True)
            gx = (ist / m) * (m * dxh - s1 - xh * s2)
            dgamma = (grad * xh).sum(axis=(0, 2, 3), keepdims=True)
            dbeta = grad.sum(axis=(0, 2, 3), keepdims=True)
            return gx, dgamma, dbeta

        return _out(g, out, (x, gamma, beta), backward)

    if mode != EVAL:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not stats.initialized:
        raise RuntimeError("batch_norm2d: eval mode before running stats were "
                           "initialized; call init_identity() or train first")
    ist = 1.0 / np.sqrt(stats.var + eps).reshape(1, c, 1, 1)
    xh = (x.data - stats.mean.reshape(1, c, 1, 1)) * ist
    out = gamma.data * xh + beta.data
    gam = gamma.data

    def backward_eval(grad):
        gx = grad * gam * ist
        dgamma = (grad * xh).sum(axis=(0, 2, 3), keepdims=True)
        dbeta = grad.sum(axis=(0, 2, 3), keepdims=True)
        return gx, dgamma, dbeta

    return _out(g, out, (x, gamma, beta), backward_eval)
