"""Haar wavelet pooling and the high-frequency residual skip.

Both skips factor a feature map into a half-resolution trunk that continues
through the network and a high-frequency payload carried around it. The four
2x2 Haar filters form an orthonormal basis of each 2x2 block, so pooling is
energy preserving and summing the four transposed reconstructions inverts it
exactly. The residual variant keeps the trunk an average pool and stores
what nearest upsampling of it misses.

Odd spatial dims are handled here and only here: inputs are padded to even
size by replicating the last row/column, and every merge crops back. The
pad/crop pair rides on differentiable primitives, so gradients pass through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .ops import _data


def haar_kernels():
    """The orthonormal 2x2 Haar filters as (ll, lh, hl, hh).

    lh responds to horizontal change (vertical edges), hl to vertical
    change, hh to diagonal structure. Each has unit Frobenius norm.
    """
    ll = 0.5 * np.array([[1.0, 1.0], [1.0, 1.0]])
    lh = 0.5 * np.array([[-1.0, 1.0], [-1.0, 1.0]])
    hl = 0.5 * np.array([[-1.0, -1.0], [1.0, 1.0]])
    hh = 0.5 * np.array([[1.0, -1.0], [-1.0, 1.0]])
    return ll, lh, hl, hh


@dataclass
class PadRecord:
    """Original spatial size before padding to even dims."""
    h: int
    w: int


def pad_to_even(x):
    """Replicate the last row/column so both spatial dims are even."""
    xv = _data(x)
    n, c, h, w = xv.shape
    rec = PadRecord(h=h, w=w)
    if h % 2 or w % 2:
        x = ops.pad_edge2d(x, h % 2, w % 2)
    return x, rec


def crop_to_record(x, rec):
    xv = _data(x)
    if xv.shape[2] == rec.h and xv.shape[3] == rec.w:
        return x
    return ops.crop2d(x, rec.h, rec.w)


@dataclass
class WaveletBands:
    """Half-resolution analysis coefficients, one tensor per filter."""
    ll: object
    lh: object
    hl: object
    hh: object
    rec: PadRecord

    def as_tuple(self):
        return (self.ll, self.lh, self.hl, self.hh)


def wavelet_pool(x):
    """Decompose into four half-resolution bands (pads odd inputs first)."""
    x, rec = pad_to_even(x)
    ll_k, lh_k, hl_k, hh_k = haar_kernels()
    return WaveletBands(
        ll=ops.depthwise_conv_stride2(x, ll_k),
        lh=ops.depthwise_conv_stride2(x, lh_k),
        hl=ops.depthwise_conv_stride2(x, hl_k),
        hh=ops.depthwise_conv_stride2(x, hh_k),
        rec=rec)


def wavelet_unpool(bands, low=None):
    """Upsample each band with its transposed filter and concatenate.

    low, when given, replaces the stored ll coefficients (the trunk after
    decoding); detail bands always come from the analysis-side payload. The
    result has 4c channels at full resolution, cropped to the pre-pad size.
    """
    ll_k, lh_k, hl_k, hh_k = haar_kernels()
    ll = bands.ll if low is None else low
    if _data(ll).shape != _data(bands.lh).shape:
        raise ValueError("low band shape %s does not match detail shape %s"
                         % (_data(ll).shape, _data(bands.lh).shape))
    parts = [ops.depthwise_deconv_stride2(ll, ll_k),
             ops.depthwise_deconv_stride2(bands.lh, lh_k),
             ops.depthwise_deconv_stride2(bands.hl, hl_k),
             ops.depthwise_deconv_stride2(bands.hh, hh_k)]
    return crop_to_record(ops.concat_channels(parts), bands.rec)


def wavelet_reconstruct(bands, low=None):
    """Exact inverse of wavelet_pool: sum of the transposed-filter terms."""
    ll_k, lh_k, hl_k, hh_k = haar_kernels()
    ll = bands.ll if low is None else low
    out = ops.depthwise_deconv_stride2(ll, ll_k)
    for band, k in ((bands.lh, lh_k), (bands.hl, hl_k), (bands.hh, hh_k)):
        out = ops.add(out, ops.depthwise_deconv_stride2(band, k))
    return crop_to_record(out, bands.rec)


@dataclass
class ResidualSkip:
    """Average-pooled trunk plus everything nearest upsampling loses."""
    low: object
    high: object
    rec: PadRecord


def hf_residual_split(x):
    """low = avgpool(x); high = x - upsample(low), at the padded size."""
    x, rec = pad_to_even(x)
    low = ops.avg_pool_2x2(x)
    high = ops.sub(x, ops.upsample_nearest_2x(low))
    return ResidualSkip(low=low, high=high, rec=rec)


def hf_residual_merge(decoded_low, skip):
    """upsample(decoded_low) + high, cropped back to the pre-pad size."""
    lv = _data(decoded_low)
    hv = _data(skip.high)
    if (lv.shape[0], lv.shape[1]) != (hv.shape[0], hv.shape[1]) or \
            (2 * lv.shape[2], 2 * lv.shape[3]) != (hv.shape[2], hv.shape[3]):
        raise ValueError("decoded low band %s does not match residual %s"
                         % (lv.shape, hv.shape))
    merged = ops.add(ops.upsample_nearest_2x(decoded_low), skip.high)
    return crop_to_record(merged, skip.rec)
