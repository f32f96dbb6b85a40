"""Primitive tensor operations: convolution, pooling, resampling, elementwise.

Every public op accepts plain numpy arrays or autodiff Vars (mixed freely)
and returns an ndarray when nothing was tracked, else a Var recorded on the
inputs' tape. Tensors are 4-D, laid out (batch, channel, height, width).

Convolution runs as im2col plus one GEMM; its input gradient is computed as
a transposed convolution through the same GEMM path rather than scatter-add,
which keeps the backward pass within a small factor of the forward cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Var, apply_op

PAD_MODES = ("zero", "reflect")


def _data(x):
    return x.data if isinstance(x, Var) else np.asarray(x)


def _require_4d(x, name):
    if x.ndim != 4:
        raise ValueError("%s must be 4-D (n, c, h, w), got shape %s" % (name, x.shape))


def _require_even_hw(x, op):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError("%s needs even spatial dims, got h=%d w=%d" % (op, h, w))


@dataclass
class ConvParams:
    """Weights and geometry for one 2-D convolution.

    weights: (out_c, in_c, k, k), plain array or Var. bias: (out_c,) or None.
    """

    weights: object
    bias: object = None
    stride: int = 1
    padding: int = 0
    pad_mode: str = "zero"

    def __post_init__(self):
        w = _data(self.weights)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ValueError("conv weights must be (out_c, in_c, k, k), got %s" % (w.shape,))
        k = w.shape[2]
        if k not in (1, 2, 3):
            raise ValueError("kernel size must be 1, 2 or 3, got %d" % k)
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2, got %r" % (self.stride,))
        if not isinstance(self.padding, int) or self.padding < 0:
            raise ValueError("padding must be a non-negative int, got %r" % (self.padding,))
        if self.pad_mode not in PAD_MODES:
            raise ValueError("pad_mode must be one of %s, got %r" % (PAD_MODES, self.pad_mode))
        if self.bias is not None:
            b = _data(self.bias)
            if b.shape != (w.shape[0],):
                raise ValueError("bias shape %s does not match out_c=%d" % (b.shape, w.shape[0]))

    @property
    def kernel_size(self):
        return _data(self.weights).shape[2]


def _pad2d(x, p, mode):
    if p == 0:
        return x
    if mode == "zero":
        return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    if x.shape[2] <= p or x.shape[3] <= p:
        raise ValueError("reflect padding %d needs spatial dims > %d, got (%d, %d)"
                         % (p, p, x.shape[2], x.shape[3]))
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")


def _fold_reflect(g, axis, p):
    # adjoint of reflect-padding one axis by p on both sides
    n = g.shape[axis] - 2 * p
    sl = [slice(None)] * g.ndim
    sl[axis] = slice(p, p + n)
    out = g[tuple(sl)].copy()
    for j in range(p):
        for src, dst in ((j, p - j), (p + n + j, n - 2 - j)):
            s = [slice(None)] * g.ndim
            s[axis] = src
            d = [slice(None)] * g.ndim
            d[axis] = dst
            out[tuple(d)] += g[tuple(s)]
    return out


def _pad2d_adjoint(g, p, mode):
    if p == 0:
        return g
    if mode == "zero":
        return np.ascontiguousarray(g[:, :, p:-p, p:-p])
    # np.pad fills axis 2 before axis 3, so the adjoint folds 3 then 2
    return _fold_reflect(_fold_reflect(g, 3, p), 2, p)


def _im2col(xp, k, stride):
    n, c, hp, wp = xp.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def _conv_forward(x, w, b, stride, pad, mode):
    xp = _pad2d(x, pad, mode)
    k = w.shape[2]
    cols, ho, wo = _im2col(xp, k, stride)
    y = cols @ w.reshape(w.shape[0], -1).T
    if b is not None:
        y = y + b
    n = x.shape[0]
    return np.ascontiguousarray(y.reshape(n, ho, wo, w.shape[0]).transpose(0, 3, 1, 2))


def _dilate2(g, stride):
    if stride == 1:
        return g
    n, c, h, w = g.shape
    out = np.zeros((n, c, (h - 1) * stride + 1, (w - 1) * stride + 1), dtype=g.dtype)
    out[:, :, ::stride, ::stride] = g
    return out


def _conv_input_grad(g, w, stride, pad, mode, x_shape):
    k = w.shape[2]
    gd = _dilate2(g, stride)
    wt = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    gp = np.pad(gd, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    dxp = _conv_forward(gp, wt, None, 1, 0, "zero")
    return _pad2d_adjoint(dxp, pad, mode)


def _conv_weight_grad(g, x, w_shape, stride, pad, mode):
    k = w_shape[2]
    xp = _pad2d(x, pad, mode)
    cols, ho, wo = _im2col(xp, k, stride)
    gmat = g.transpose(0, 2, 3, 1).reshape(-1, w_shape[0])
    return (gmat.T @ cols).reshape(w_shape)


def conv2d(x, params: ConvParams):
    """2-D convolution (cross-correlation) with optional bias."""
    xv = _data(x)
    wv = _data(params.weights)
    _require_4d(xv, "conv input")
    if xv.shape[1] != wv.shape[1]:
        raise ValueError("conv input has %d channels, weights expect %d"
                         % (xv.shape[1], wv.shape[1]))
    k = wv.shape[2]
    stride, pad, mode = params.stride, params.padding, params.pad_mode
    hp = xv.shape[2] + 2 * pad
    wp = xv.shape[3] + 2 * pad
    if hp < k or wp < k:
        raise ValueError("conv input %dx%d (padded %dx%d) smaller than kernel %d"
                         % (xv.shape[2], xv.shape[3], hp, wp, k))
    if (hp - k) % stride or (wp - k) % stride:
        raise ValueError("conv output size not integral: padded %dx%d, k=%d, stride=%d"
                         % (hp, wp, k, stride))

    slots = [x, params.weights] + ([] if params.bias is None else [params.bias])
    has_bias = params.bias is not None

    def fwd(vals):
        return _conv_forward(vals[0], vals[1], vals[2] if has_bias else None,
                             stride, pad, mode)

    def bwd(g, vals, out, needs):
        gx = _conv_input_grad(g, vals[1], stride, pad, mode, vals[0].shape) if needs[0] else None
        gw = _conv_weight_grad(g, vals[0], vals[1].shape, stride, pad, mode) if needs[1] else None
        gs = [gx, gw]
        if has_bias:
            gs.append(g.sum(axis=(0, 2, 3)) if needs[2] else None)
        return gs

    return apply_op("conv2d", slots, fwd, bwd)


def depthwise_conv_stride2(x, kernel):
    """Apply one fixed 2x2 kernel per channel with stride 2.

    The kernel is a plain (2, 2) array shared by all channels; it is a
    structural constant (wavelet analysis filter), never trained.
    """
    xv = _data(x)
    _require_4d(xv, "depthwise conv input")
    _require_even_hw(xv, "depthwise_conv_stride2")
    kv = np.asarray(kernel)
    if kv.shape != (2, 2):
        raise ValueError("depthwise kernel must be (2, 2), got %s" % (kv.shape,))

    def fwd(vals):
        v = vals[0]
        n, c, h, w = v.shape
        blocks = v.reshape(n, c, h // 2, 2, w // 2, 2)
        return np.einsum("ncipjq,pq->ncij", blocks, kv)

    def bwd(g, vals, out, needs):
        n, c, h, w = vals[0].shape
        t = g[:, :, :, None, :, None] * kv[None, None, None, :, None, :]
        return [t.reshape(n, c, h, w)]

    return apply_op("depthwise_conv_stride2", [x], fwd, bwd)


def depthwise_deconv_stride2(x, kernel):
    """Transpose of depthwise_conv_stride2; doubles both spatial dims."""
    xv = _data(x)
    _require_4d(xv, "depthwise deconv input")
    kv = np.asarray(kernel)
    if kv.shape != (2, 2):
        raise ValueError("depthwise kernel must be (2, 2), got %s" % (kv.shape,))

    def fwd(vals):
        v = vals[0]
        n, c, h, w = v.shape
        t = v[:, :, :, None, :, None] * kv[None, None, None, :, None, :]
        return t.reshape(n, c, 2 * h, 2 * w)

    def bwd(g, vals, out, needs):
        n, c, h, w = vals[0].shape
        blocks = g.reshape(n, c, h, 2, w, 2)
        return [np.einsum("ncipjq,pq->ncij", blocks, kv)]

    return apply_op("depthwise_deconv_stride2", [x], fwd, bwd)


def relu(x):
    def fwd(vals):
        return np.maximum(vals[0], 0)

    def bwd(g, vals, out, needs):
        return [g * (vals[0] > 0)]

    return apply_op("relu", [x], fwd, bwd)


def avg_pool_2x2(x):
    xv = _data(x)
    _require_4d(xv, "avg pool input")
    _require_even_hw(xv, "avg_pool_2x2")

    def fwd(vals):
        v = vals[0]
        n, c, h, w = v.shape
        return v.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bwd(g, vals, out, needs):
        n, c, h, w = vals[0].shape
        t = np.broadcast_to(g[:, :, :, None, :, None] * 0.25,
                            (n, c, h // 2, 2, w // 2, 2))
        return [t.reshape(n, c, h, w)]

    return apply_op("avg_pool_2x2", [x], fwd, bwd)


def upsample_nearest_2x(x):
    xv = _data(x)
    _require_4d(xv, "upsample input")

    def fwd(vals):
        v = vals[0]
        n, c, h, w = v.shape
        t = np.broadcast_to(v[:, :, :, None, :, None], (n, c, h, 2, w, 2))
        return np.ascontiguousarray(t.reshape(n, c, 2 * h, 2 * w))

    def bwd(g, vals, out, needs):
        n, c, h, w = vals[0].shape
        return [g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))]

    return apply_op("upsample_nearest_2x", [x], fwd, bwd)


def max_pool_2x2(x):
    """Max over disjoint 2x2 blocks.

    Returns (values, index_map); the index map holds each block's argmax in
    row-major block order (0..3, first maximum wins ties) and is plain data,
    outside differentiation.
    """
    xv = _data(x)
    _require_4d(xv, "max pool input")
    _require_even_hw(xv, "max_pool_2x2")
    n, c, h, w = xv.shape
    hh, ww = h // 2, w // 2

    def to_blocks(v):
        return v.reshape(n, c, hh, 2, ww, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hh, ww, 4)

    idx = to_blocks(xv).argmax(axis=-1)

    def fwd(vals):
        b = to_blocks(vals[0])
        return np.take_along_axis(b, idx[..., None], axis=-1)[..., 0]

    def bwd(g, vals, out, needs):
        dz = np.zeros((n, c, hh, ww, 4), dtype=g.dtype)
        np.put_along_axis(dz, idx[..., None], g[..., None], axis=-1)
        return [dz.reshape(n, c, hh, ww, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)]

    return apply_op("max_pool_2x2", [x], fwd, bwd), idx


def max_unpool_2x2(x, index_map):
    """Scatter values back to argmax positions; zeros elsewhere."""
    xv = _data(x)
    _require_4d(xv, "max unpool input")
    idx = np.asarray(index_map)
    if idx.shape != xv.shape:
        raise ValueError("index map shape %s does not match values shape %s"
                         % (idx.shape, xv.shape))
    if idx.size and (idx.min() < 0 or idx.max() > 3):
        raise ValueError("index map entries must lie in [0, 3]")
    n, c, hh, ww = xv.shape

    def fwd(vals):
        z = np.zeros((n, c, hh, ww, 4), dtype=vals[0].dtype)
        np.put_along_axis(z, idx[..., None], vals[0][..., None], axis=-1)
        return z.reshape(n, c, hh, ww, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, 2 * hh, 2 * ww)

    def bwd(g, vals, out, needs):
        b = g.reshape(n, c, hh, 2, ww, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hh, ww, 4)
        return [np.take_along_axis(b, idx[..., None], axis=-1)[..., 0]]

    return apply_op("max_unpool_2x2", [x], fwd, bwd)


def _binary(tag, a, b, f, dfa, dfb):
    av, bv = _data(a), _data(b)
    if av.shape != bv.shape:
        raise ValueError("%s operands differ in shape: %s vs %s" % (tag, av.shape, bv.shape))

    def fwd(vals):
        return f(vals[0], vals[1])

    def bwd(g, vals, out, needs):
        return [dfa(g) if needs[0] else None, dfb(g) if needs[1] else None]

    return apply_op(tag, [a, b], fwd, bwd)


def add(a, b):
    return _binary("add", a, b, lambda x, y: x + y, lambda g: g, lambda g: g)


def sub(a, b):
    return _binary("sub", a, b, lambda x, y: x - y, lambda g: g, lambda g: -g)


def scale(x, c):
    c = float(c)

    def fwd(vals):
        return vals[0] * c

    def bwd(g, vals, out, needs):
        return [g * c]

    return apply_op("scale", [x], fwd, bwd)


def concat_channels(parts):
    """Concatenate along the channel axis."""
    parts = list(parts)
    if not parts:
        raise ValueError("concat_channels needs at least one input")
    shapes = [_data(p).shape for p in parts]
    for s in shapes:
        if len(s) != 4 or s[0] != shapes[0][0] or s[2:] != shapes[0][2:]:
            raise ValueError("concat_channels inputs must agree outside the channel "
                             "axis, got %s" % (shapes,))
    widths = [s[1] for s in shapes]
    offsets = np.cumsum([0] + widths)

    def fwd(vals):
        return np.concatenate(vals, axis=1)

    def bwd(g, vals, out, needs):
        return [np.ascontiguousarray(g[:, offsets[i]:offsets[i + 1]]) if needs[i] else None
                for i in range(len(vals))]

    return apply_op("concat_channels", parts, fwd, bwd)


def crop2d(x, out_h, out_w):
    """Keep the top-left out_h x out_w window."""
    xv = _data(x)
    _require_4d(xv, "crop input")
    n, c, h, w = xv.shape
    if not (0 < out_h <= h and 0 < out_w <= w):
        raise ValueError("crop to %dx%d invalid for input %dx%d" % (out_h, out_w, h, w))

    def fwd(vals):
        return np.ascontiguousarray(vals[0][:, :, :out_h, :out_w])

    def bwd(g, vals, out, needs):
        return [np.pad(g, ((0, 0), (0, 0), (0, h - out_h), (0, w - out_w)))]

    return apply_op("crop2d", [x], fwd, bwd)


def pad_edge2d(x, pad_h, pad_w):
    """Replicate the last row pad_h times and the last column pad_w times."""
    xv = _data(x)
    _require_4d(xv, "pad input")
    if pad_h < 0 or pad_w < 0:
        raise ValueError("pad amounts must be non-negative, got (%d, %d)" % (pad_h, pad_w))
    n, c, h, w = xv.shape

    def fwd(vals):
        return np.pad(vals[0], ((0, 0), (0, 0), (0, pad_h), (0, pad_w)), mode="edge")

    def bwd(g, vals, out, needs):
        core = g[:, :, :h, :w].copy()
        if pad_h:
            core[:, :, -1, :] += g[:, :, h:, :w].sum(axis=2)
        if pad_w:
            core[:, :, :, -1] += g[:, :, :h, w:].sum(axis=3)
        if pad_h and pad_w:
            core[:, :, -1, -1] += g[:, :, h:, w:].sum(axis=(2, 3))
        return [core]

    return apply_op("pad_edge2d", [x], fwd, bwd)


def mean_sq(x):
    """Mean of squared entries, as a 0-d scalar. The workhorse loss reduction."""
    xv = _data(x)
    if xv.size == 0:
        raise ValueError("mean_sq of an empty tensor")

    def fwd(vals):
        v = vals[0]
        return np.asarray((v * v).sum() / v.size, dtype=v.dtype)

    def bwd(g, vals, out, needs):
        v = vals[0]
        return [g * (2.0 / v.size) * v]

    return apply_op("mean_sq", [x], fwd, bwd)
