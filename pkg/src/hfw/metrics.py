"""Quality metrics: reconstruction tables, style distance, normalization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model, ops
from .matting import matting_laplacian, quadratic_form

MAX_STYLE_LEVELS = 5


@dataclass(frozen=True)
class StyleLossConfig:
    """Knobs for the Gram-based style distance and its photorealism term.

    beta weights one Gram term per feature level (five slots; unavailable
    levels renormalize the rest). lambda_reg scales the Matting-Laplacian
    quadratic form built from the content image. regularizer_max_side caps
    the image size fed to that P x P matrix; larger inputs are integer
    area-averaged down first.
    """
    beta: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)
    lambda_reg: float = 100.0
    matting_window: int = 3
    matting_eps: float = 1e-7
    regularizer_max_side: int = 64

    def __post_init__(self):
        if len(self.beta) != MAX_STYLE_LEVELS:
            raise ValueError("beta needs %d entries, got %d"
                             % (MAX_STYLE_LEVELS, len(self.beta)))
        if any(b < 0 for b in self.beta):
            raise ValueError("beta weights must be >= 0")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")
        if self.regularizer_max_side < 3:
            raise ValueError("regularizer_max_side must be >= 3")


def reconstruction_losses(images, config, weights):
    """Autoencoding quality of a trained model over a batch.

    Returns {"tap1": ..., "tap2": ..., ..., "image": ...}: the tap entries
    compare the decoder's intermediate features against the encoder's at
    the same level, as relative squared error (scale free); "image" is the
    absolute mean squared pixel error.
    """
    images = np.ascontiguousarray(np.asarray(images), dtype=config.dtype)
    z, taps, skips = model.encode(images, config, weights)
    dec_taps = {}

    def hook(level, x):
        dec_taps[level] = x
        return x

    out = model.decode(z, skips, config, weights, tap_hook=hook)
    losses = {}
    for level in range(1, config.depth):
        diff = dec_taps[level] - taps[level]
        losses["tap%d" % level] = float((diff ** 2).sum() / (taps[level] ** 2).sum())
    losses["image"] = float(((out - images) ** 2).mean())
    return losses


def image_recon_loss(image, recon):
    """Mean squared pixel error, absolute (divides by element count)."""
    image = np.asarray(image, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if image.shape != recon.shape:
        raise ValueError("shape mismatch %s vs %s" % (image.shape, recon.shape))
    return float(((image - recon) ** 2).mean())


def feature_recon_loss(feat, recon):
    """Relative squared feature error: ||F - F_r||^2 / ||F||^2."""
    feat = np.asarray(feat, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if feat.shape != recon.shape:
        raise ValueError("shape mismatch %s vs %s" % (feat.shape, recon.shape))
    denom = float((feat ** 2).sum())
    if denom == 0.0:
        raise ValueError("relative loss undefined for an all-zero reference")
    return float(((feat - recon) ** 2).sum() / denom)


def gram_matrix(feat):
    """Channel co-activation matrix F F' / (h w) of a (c, h, w) feature."""
    feat = np.asarray(feat, dtype=np.float64)
    if feat.ndim == 4:
        if feat.shape[0] != 1:
            raise ValueError("expected one feature map, got batch %d" % feat.shape[0])
        feat = feat[0]
    if feat.ndim != 3:
        raise ValueError("expected (c, h, w), got %s" % (feat.shape,))
    c, h, w = feat.shape
    flat = feat.reshape(c, h * w)
    return flat @ flat.T / (h * w)


def extended_encoder(config, weights, seed=0):
    """Config and weights with one extra seeded encoder block.

    The extra block lets style metrics read one level deeper than the
    model itself uses (width doubling, capped at 512). Its weights come
    from the same seeded stand-in scheme as the trunk's, never train, and
    never touch the entries they are merged alongside.
    """
    w_d = config.tap_channels(config.depth)
    w_top = min(2 * w_d, 512)
    blocks = config.blocks + (
        model.BlockSpec(outer=((w_d, w_d),), pooled=True, inner=((w_d, w_top),)),)
    ext = model.ModelConfig(preset="custom", depth=config.depth + 1,
                            skip_variant=config.skip_variant,
                            precision=config.precision, blocks=blocks)
    rng = np.random.default_rng(np.random.PCG64(seed))
    merged = dict(weights)
    for name, ci, co in model._encoder_convs(ext, ext.depth):
        kern = model._encoder_kernel(rng, co, ci)
        merged[name + ".weight"] = kern.astype(np.float32).astype(config.dtype)
        merged[name + ".bias"] = np.zeros(co, dtype=config.dtype)
    return ext, merged


def _as_batch(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image[None]
    if image.ndim != 4:
        raise ValueError("expected an image (c, h, w), got %s" % (image.shape,))
    return image


def gram_style_loss(output, style, config, weights, cfg=None, deep_tap=True,
                    seed=0):
    """Weighted Gram-matrix distance between two images across levels.

    Levels 1..depth come from the encoder's taps. With deep_tap, one extra
    seeded block supplies the next level up, used by metrics alone. When
    fewer than five levels are available the beta weights renormalize over
    the present ones, and the result says so.

    Returns {"per_level": {level: loss}, "total", "levels", "beta",
    "renormalized"}.
    """
    cfg = cfg or StyleLossConfig()
    if deep_tap:
        config, weights = extended_encoder(config, weights, seed=seed)
    levels = tuple(range(1, min(config.depth, MAX_STYLE_LEVELS) + 1))
    beta = np.array([cfg.beta[l - 1] for l in levels], dtype=np.float64)
    renormalized = len(levels) < MAX_STYLE_LEVELS
    if renormalized:
        total_b = beta.sum()
        if total_b > 0:
            beta = beta / total_b * sum(cfg.beta)
    _, taps_o, _ = model.encode(_as_batch(output), config, weights,
                                upto=levels[-1], capture_skips=False)
    _, taps_s, _ = model.encode(_as_batch(style), config, weights,
                                upto=levels[-1], capture_skips=False)
    per_level = {}
    total = 0.0
    for b, level in zip(beta, levels):
        diff = gram_matrix(taps_o[level]) - gram_matrix(taps_s[level])
        per_level[level] = float((diff ** 2).sum())
        total += b * per_level[level]
    return {"per_level": per_level, "total": float(total), "levels": levels,
            "beta": tuple(float(b) for b in beta), "renormalized": renormalized}


def _area_downscale(image, max_side):
    """Integer-factor block averaging until max(h, w) <= max_side.

    Trailing rows/columns that do not fill a block are dropped so both
    images of a pair land on the same grid. Returns (image, factor).
    """
    c, h, w = image.shape
    k = max(1, int(np.ceil(max(h, w) / max_side)))
    if k == 1:
        return image, 1
    hh, ww = h // k, w // k
    crop = image[:, :hh * k, :ww * k]
    down = crop.reshape(c, hh, k, ww, k).mean(axis=(2, 4))
    return down, k


def regularized_style_loss(output, content, style, config, weights, cfg=None,
                           deep_tap=True, seed=0):
    """Gram style distance plus the photorealism penalty.

    The penalty is the quadratic form of each output channel on the
    Matting Laplacian of the content image, scaled by lambda_reg. Both
    images are area-averaged down to cfg.regularizer_max_side first (the
    matrix is P x P in the pixel count); the factor used is reported, and
    the penalty comes back both raw and per-pixel since conventions vary.
    """
    cfg = cfg or StyleLossConfig()
    gram = gram_style_loss(output, style, config, weights, cfg=cfg,
                           deep_tap=deep_tap, seed=seed)
    out_img = _as_batch(output)[0]
    con_img = _as_batch(content)[0]
    if out_img.shape != con_img.shape:
        raise ValueError("output %s and content %s must share a shape"
                         % (out_img.shape, con_img.shape))
    out_small, factor = _area_downscale(out_img, cfg.regularizer_max_side)
    con_small, _ = _area_downscale(con_img, cfg.regularizer_max_side)
    lap = matting_laplacian(con_small, window=cfg.matting_window,
                            eps=cfg.matting_eps)
    reg = sum(quadratic_form(lap, out_small[ch])
              for ch in range(out_small.shape[0]))
    pixels = out_small.shape[1] * out_small.shape[2]
    return {
        "total": float(gram["total"] + cfg.lambda_reg * reg),
        "gram": gram,
        "regularizer_raw": float(reg),
        "regularizer_per_pixel": float(reg / pixels),
        "downscale_factor": factor,
    }


@dataclass
class NormalizedScore:
    """Cross-method z-scores of per-pair style losses.

    raw is (methods, pairs); normalized holds, per pair, the z-score of
    each method's loss across methods (sample std, zeros when a pair's
    losses all tie). method_means averages each row of normalized.
    """
    raw: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    normalized: np.ndarray
    method_means: np.ndarray
    methods: tuple = field(default=())


def normalize_losses(raw, methods=None):
    """Z-score a methods x pairs loss grid per pair, then average per method.

    Scores from different image pairs live on wildly different scales, so
    each pair's column is centered and scaled across methods before any
    cross-pair averaging. Needs at least two methods.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError("expected a (methods, pairs) grid, got %s" % (raw.shape,))
    m, p = raw.shape
    if m < 2:
        raise ValueError("normalization needs >= 2 methods, got %d" % m)
    if methods is not None and len(methods) != m:
        raise ValueError("%d method names for %d rows" % (len(methods), m))
    mu = raw.mean(axis=0)
    sigma = raw.std(axis=0, ddof=1)
    normalized = np.zeros_like(raw)
    live = sigma > 0
    normalized[:, live] = (raw[:, live] - mu[live]) / sigma[live]
    return NormalizedScore(raw=raw, mu=mu, sigma=sigma, normalized=normalized,
                           method_means=normalized.mean(axis=1),
                           methods=tuple(methods) if methods else ())
