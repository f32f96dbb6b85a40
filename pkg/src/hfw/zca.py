"""Whitening and coloring transforms on feature maps.

Statistics are taken per channel over all pixels (and batch entries); the
transform rotates content features into the style covariance and recenters
them on the style mean. Everything here is plain numpy on detached arrays;
these transforms sit outside the training graph by design.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ZcaOptions:
    """eps_clamp floors eigenvalues relative to the largest one; alpha blends
    the transformed features with the originals (1 = fully transformed)."""
    eps_clamp: float = 1e-8
    alpha: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1], got %r" % (self.alpha,))
        if self.eps_clamp < 0:
            raise ValueError("eps_clamp must be >= 0, got %r" % (self.eps_clamp,))


@dataclass
class FeatureStats:
    """Per-channel mean and covariance eigendecomposition.

    eigvecs columns are ordered by descending eigenvalue and sign-fixed so
    each column's largest-magnitude entry is positive; eigvals are clamped
    to a small positive floor so whitening never divides by zero.
    """
    mean: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray
    count: int


def _columns(f):
    f = np.asarray(f)
    if f.ndim != 4:
        raise ValueError("features must be 4-D (n, c, h, w), got shape %s" % (f.shape,))
    n, c, h, w = f.shape
    return f.transpose(1, 0, 2, 3).reshape(c, n * h * w)


def stats_from_columns(cols, opts=None):
    """Stats over a (c, count) column matrix."""
    opts = opts or ZcaOptions()
    cols = np.asarray(cols, dtype=np.float64)
    if not np.isfinite(cols).all():
        raise ValueError("features contain non-finite values")
    c, count = cols.shape
    if count < 1:
        raise ValueError("need at least one pixel to take feature statistics")
    mean = cols.mean(axis=1)
    centered = cols - mean[:, None]
    cov = (centered @ centered.T) / count
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    for j in range(c):
        k = np.argmax(np.abs(vecs[:, j]))
        if vecs[k, j] < 0:
            vecs[:, j] = -vecs[:, j]
    top = vals[0] if vals.size and vals[0] > 0 else 0.0
    floor = opts.eps_clamp * top if top > 0 else opts.eps_clamp
    vals = np.maximum(vals, floor)
    return FeatureStats(mean=mean, eigvecs=vecs, eigvals=vals, count=count)


def feature_stats(f, opts=None):
    """Stats of a feature map over batch and both spatial axes."""
    return stats_from_columns(_columns(f), opts)


def _coloring(stats):
    return (stats.eigvecs * np.sqrt(stats.eigvals)) @ stats.eigvecs.T


def _whitening(stats):
    return (stats.eigvecs / np.sqrt(stats.eigvals)) @ stats.eigvecs.T


def _transform_columns(cols, content_stats, style_stats):
    centered = cols - content_stats.mean[:, None]
    out = _coloring(style_stats) @ (_whitening(content_stats) @ centered)
    return out + style_stats.mean[:, None]


def zca_transform(content, style_stats, opts=None):
    """Move content features onto the style mean and covariance.

    Fresh content statistics are taken from `content` itself each call.
    With alpha < 1 the result is blended toward the untransformed input.
    """
    opts = opts or ZcaOptions()
    f = np.asarray(content)
    cols = _columns(f).astype(np.float64)
    cstats = stats_from_columns(cols, opts)
    out = _transform_columns(cols, cstats, style_stats)
    n, c, h, w = f.shape
    out = out.reshape(c, n, h, w).transpose(1, 0, 2, 3)
    if opts.alpha != 1.0:
        out = opts.alpha * out + (1.0 - opts.alpha) * f
    return out.astype(f.dtype, copy=False)


def resize_labels_nearest(labels, h, w):
    """Nearest-neighbor resample of an integer label map to (h, w)."""
    lab = np.asarray(labels)
    if lab.ndim != 2:
        raise ValueError("label map must be 2-D, got shape %s" % (lab.shape,))
    src_h, src_w = lab.shape
    ii = np.minimum(((np.arange(h) + 0.5) * src_h / h).astype(int), src_h - 1)
    jj = np.minimum(((np.arange(w) + 0.5) * src_w / w).astype(int), src_w - 1)
    return lab[np.ix_(ii, jj)]


def label_guided_zca(content, style, content_labels, style_labels, opts=None):
    """Per-segment whitening/coloring driven by two label maps.

    Label maps may be any resolution; they are nearest-resampled to each
    feature map's spatial size. Content segments whose label is missing from
    the style map fall back to whole-style statistics.
    """
    opts = opts or ZcaOptions()
    fc = np.asarray(content)
    fs = np.asarray(style)
    if fc.ndim != 4 or fc.shape[0] != 1 or fs.ndim != 4 or fs.shape[0] != 1:
        raise ValueError("label-guided transform expects single-image (1, c, h, w) "
                         "features, got %s and %s" % (fc.shape, fs.shape))
    if fc.shape[1] != fs.shape[1]:
        raise ValueError("content and style features disagree on channels: %d vs %d"
                         % (fc.shape[1], fs.shape[1]))
    lab_c = resize_labels_nearest(content_labels, fc.shape[2], fc.shape[3]).reshape(-1)
    lab_s = resize_labels_nearest(style_labels, fs.shape[2], fs.shape[3]).reshape(-1)
    cols_c = _columns(fc).astype(np.float64)
    cols_s = _columns(fs).astype(np.float64)
    whole_style = stats_from_columns(cols_s, opts)
    out = np.empty_like(cols_c)
    for label in np.unique(lab_c):
        mask_c = lab_c == label
        mask_s = lab_s == label
        sstats = (stats_from_columns(cols_s[:, mask_s], opts)
                  if mask_s.any() else whole_style)
        cstats = stats_from_columns(cols_c[:, mask_c], opts)
        out[:, mask_c] = _transform_columns(cols_c[:, mask_c], cstats, sstats)
    n, c, h, w = fc.shape
    out = out.reshape(c, n, h, w).transpose(1, 0, 2, 3)
    if opts.alpha != 1.0:
        out = opts.alpha * out + (1.0 - opts.alpha) * fc
    return out.astype(fc.dtype, copy=False)
