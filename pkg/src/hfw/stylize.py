"""Coarse-to-fine stylization and the per-level cascade baseline.

A single encode captures skips once; ZCA edits then ride the decoder's tap
hook, deepest first, so one autoencoder pass applies every enabled level.
The cascade instead re-encodes its own output once per level, the way the
chained-autoencoder formulation works, and exists for parity and timing
comparisons.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import guided, model, zca

POSTPROCESS_MODES = ("off", "guided")
GUIDE_SOURCES = ("content", "output")


@dataclass
class StylizeOptions:
    """levels_enabled picks which feature levels get the style transform
    (level D is the bottleneck, lower levels ride the decoder taps).
    postprocess "guided" smooths the result with an edge-preserving filter;
    guide_source picks what drives it. Label maps, when both sides have
    one, switch the transform to per-segment statistics."""
    levels_enabled: frozenset = frozenset((1, 2, 3, 4))
    zca: zca.ZcaOptions = field(default_factory=zca.ZcaOptions)
    content_labels: Optional[np.ndarray] = None
    style_labels: Optional[np.ndarray] = None
    postprocess: str = "off"
    radius: Optional[int] = None
    eps: float = guided.DEFAULT_EPS
    guide_source: str = "content"
    cascade_mode: bool = False

    def __post_init__(self):
        self.levels_enabled = frozenset(self.levels_enabled)
        if not self.levels_enabled <= {1, 2, 3, 4}:
            raise ValueError("levels_enabled must be a subset of {1,2,3,4}, got %s"
                             % sorted(self.levels_enabled))
        if self.postprocess not in POSTPROCESS_MODES:
            raise ValueError("postprocess must be one of %s, got %r"
                             % (", ".join(POSTPROCESS_MODES), self.postprocess))
        if self.radius is not None and self.radius < 1:
            raise ValueError("radius must be >= 1, got %r" % (self.radius,))
        if self.eps <= 0:
            raise ValueError("eps must be positive, got %r" % (self.eps,))
        if self.guide_source not in GUIDE_SOURCES:
            raise ValueError("guide_source must be one of %s, got %r"
                             % (", ".join(GUIDE_SOURCES), self.guide_source))


@dataclass
class StyleFeatures:
    """Everything stylization needs from one style image, computed once.

    taps[N] is the style's level-N feature; stats[N] its whole-image
    second-order statistics; label_stats[N][label] the per-segment ones
    when the style came with a label map.
    """
    taps: dict
    stats: dict
    labels: Optional[np.ndarray] = None
    label_stats: dict = field(default_factory=dict)


def prepare_style(style_image, config, weights, labels=None, zca_opts=None):
    """Encode a style image and cache per-level statistics."""
    zopts = zca_opts or zca.ZcaOptions()
    img = _as_batch(style_image, config)
    _, taps, _ = model.encode(img, config, weights, capture_skips=False)
    stats = {n: zca.feature_stats(taps[n], zopts) for n in taps}
    label_stats = {}
    if labels is not None:
        labels = np.asarray(labels)
        for n, tap in taps.items():
            lab = zca.resize_labels_nearest(labels, tap.shape[2], tap.shape[3])
            cols = tap.transpose(1, 0, 2, 3).reshape(tap.shape[1], -1)
            per = {}
            for value in np.unique(lab):
                mask = (lab.reshape(-1) == value)
                per[int(value)] = zca.stats_from_columns(cols[:, mask], zopts)
            label_stats[n] = per
    return StyleFeatures(taps=taps, stats=stats, labels=labels,
                         label_stats=label_stats)


def _as_batch(image, config):
    img = np.asarray(image, dtype=config.dtype)
    if img.ndim == 3:
        img = img[None]
    if img.ndim != 4 or img.shape[0] != 1:
        raise ValueError("expected one (c, h, w) image, got shape %s" % (img.shape,))
    return img


def _check_trained(config, weights):
    missing = [n for n in model.decoder_param_names(config) if n not in weights]
    if missing:
        raise ValueError("decoder weights are missing (untrained model?): "
                         "first absent entry %s" % missing[0])


def _label_pair(opts, style_feats):
    style_labels = (opts.style_labels if opts.style_labels is not None
                    else style_feats.labels)
    content_labels = opts.content_labels
    if (content_labels is None) != (style_labels is None):
        raise ValueError("label maps must come in pairs; got one for %s only"
                         % ("content" if style_labels is None else "style"))
    return content_labels, style_labels


class _Transformer:
    """Applies the per-level ZCA edit and keeps count/time for reports."""

    def __init__(self, style_feats, opts, content_labels, style_labels):
        self.sf = style_feats
        self.opts = opts
        self.content_labels = content_labels
        self.style_labels = style_labels
        self.count = 0
        self.seconds = 0.0

    def __call__(self, feat, level):
        t0 = time.perf_counter()
        if self.content_labels is not None:
            out = zca.label_guided_zca(feat, self.sf.taps[level],
                                       self.content_labels, self.style_labels,
                                       self.opts.zca)
        else:
            out = zca.zca_transform(feat, self.sf.stats[level], self.opts.zca)
        self.count += 1
        self.seconds += time.perf_counter() - t0
        return out


def _postprocess(out_img, content_img, opts):
    if opts.postprocess == "off":
        return out_img
    guide = content_img if opts.guide_source == "content" else out_img
    radius = opts.radius
    if radius is None:
        radius = guided.default_radius(out_img.shape[1], out_img.shape[2])
    filtered = guided.guided_filter(guide, out_img, radius=radius, eps=opts.eps)
    return np.clip(filtered, 0.0, 1.0)


def stylize(content_image, style_feats, config, weights, opts=None, report=None):
    """One autoencoder pass with style transforms at every enabled level.

    Encodes the content (capturing skips), edits the bottleneck when level
    D is enabled, edits each decoder tap on the way out, clamps to [0, 1],
    and optionally smooths. An empty levels_enabled with postprocess off
    reduces to plain reconstruction. `report`, when a dict, receives the
    transform count and a wall-clock breakdown.
    """
    opts = opts or StylizeOptions()
    _check_trained(config, weights)
    levels = {n for n in opts.levels_enabled if n <= config.depth}
    content_labels, style_labels = _label_pair(opts, style_feats)
    tf = _Transformer(style_feats, opts, content_labels, style_labels)
    img = _as_batch(content_image, config)

    t0 = time.perf_counter()
    x, _, skips = model.encode(img, config, weights)
    t_encode = time.perf_counter() - t0
    if config.depth in levels:
        x = tf(x, config.depth)

    def hook(level, feat):
        return tf(feat, level) if level in levels else feat

    tf_before = tf.seconds
    t1 = time.perf_counter()
    out = model.decode(x, skips, config, weights, tap_hook=hook)
    t_decode = time.perf_counter() - t1 - (tf.seconds - tf_before)
    out = np.clip(out[0], 0.0, 1.0)

    t2 = time.perf_counter()
    out = _postprocess(out, img[0], opts)
    t_post = time.perf_counter() - t2
    if report is not None:
        report.update(transforms=tf.count, encode_s=t_encode,
                      transform_s=tf.seconds, decode_s=max(t_decode, 0.0),
                      postprocess_s=t_post)
    return out.astype(config.dtype, copy=False)


def stylize_cascade(content_image, style_feats, config, weights, opts=None,
                    report=None):
    """Chained-autoencoder stylization: one full pass per enabled level.

    Round N encodes the current image to level N, edits that feature, and
    decodes back to an image with the round's own skips; rounds run deepest
    to shallowest and each output feeds the next. Matches stylize exactly
    when a single level is enabled, and costs the extra passes otherwise.
    """
    opts = opts or StylizeOptions()
    _check_trained(config, weights)
    levels = sorted((n for n in opts.levels_enabled if n <= config.depth),
                    reverse=True)
    content_labels, style_labels = _label_pair(opts, style_feats)
    tf = _Transformer(style_feats, opts, content_labels, style_labels)
    img = _as_batch(content_image, config)

    t_encode = t_decode = 0.0
    cur = img
    for level in levels:
        t0 = time.perf_counter()
        x, _, skips = model.encode(cur, config, weights, upto=level)
        t_encode += time.perf_counter() - t0
        x = tf(x, level)
        t1 = time.perf_counter()
        out = model.decode(x, skips, config, weights, start_level=level)
        t_decode += time.perf_counter() - t1
        cur = np.clip(out, 0.0, 1.0)

    t2 = time.perf_counter()
    final = _postprocess(cur[0], img[0], opts)
    t_post = time.perf_counter() - t2
    if report is not None:
        report.update(transforms=tf.count, encode_s=t_encode,
                      transform_s=tf.seconds, decode_s=t_decode,
                      postprocess_s=t_post)
    return final.astype(config.dtype, copy=False)
