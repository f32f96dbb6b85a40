"""Encoder/decoder assembly with pluggable pooling-site skips.

The encoder is a VGG-style stack cut into numbered blocks. Block 1 has no
pooling; each deeper block runs its pre-pool convs ("outer"), pools, then
its post-pool convs ("inner"). The decoder mirrors the stack: inner convs
reversed, an unpooling merge at the skip site, outer convs reversed. All
model convs are 3x3, stride 1, reflect-padded by 1; every conv is followed
by a relu except the final image-emitting one.

Four skip variants move information around the bottleneck:
  none           trunk = average pool, merge = nearest upsample
  max_indices    trunk = max pool, merge scatters through the argmax map
  wavelet_concat trunk = Haar low band, merge concatenates all four
                 transposed-filter reconstructions (4c channels into the
                 following conv)
  hf_residual    trunk = average pool, merge = upsample + stored residual

Weights live in a flat name->array dict (enc2.conv0.weight, dec3.conv1.bias,
...), so a trainer can wrap exactly the entries it is optimizing in tape
leaves and leave the rest as frozen plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops, wavelet
from .ops import ConvParams
from .wavelet import PadRecord, ResidualSkip, WaveletBands

SKIP_VARIANTS = ("none", "max_indices", "wavelet_concat", "hf_residual")
PRESETS = ("vgg19", "tiny", "custom")


@dataclass(frozen=True)
class BlockSpec:
    """Conv chains around one pooling site, as (in_c, out_c) pairs."""
    outer: tuple
    pooled: bool
    inner: tuple


@dataclass(frozen=True)
class MaxSkip:
    """Argmax map captured by max pooling, plus the pre-pad geometry."""
    index_map: object
    rec: PadRecord


@dataclass(frozen=True)
class ModelConfig:
    preset: str
    depth: int
    skip_variant: str
    precision: str
    blocks: tuple

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32

    def tap_channels(self, level):
        blk = self.blocks[level - 1]
        chain = blk.inner if blk.inner else blk.outer
        return chain[-1][1]


def _vgg19_blocks(depth):
    widths = (64, 128, 256, 512)
    blocks = [BlockSpec(outer=((3, 64),), pooled=False, inner=())]
    reps = (1, 1, 3)
    for n in range(2, depth + 1):
        w_in, w_out = widths[n - 2], widths[n - 1]
        outer = tuple((w_in, w_in) for _ in range(reps[n - 2]))
        blocks.append(BlockSpec(outer=outer, pooled=True, inner=((w_in, w_out),)))
    return tuple(blocks)


def _tiny_blocks(depth):
    widths = (8, 16, 32, 64)
    blocks = [BlockSpec(outer=((3, 8),), pooled=False, inner=())]
    for n in range(2, depth + 1):
        w_in, w_out = widths[n - 2], widths[n - 1]
        blocks.append(BlockSpec(outer=((w_in, w_in),), pooled=True,
                                inner=((w_in, w_out),)))
    return tuple(blocks)


def _validate_blocks(blocks):
    if not blocks:
        raise ValueError("a model needs at least one block")
    if blocks[0].pooled or blocks[0].inner:
        raise ValueError("block 1 must be an unpooled outer-only block")
    prev_out = None
    for n, blk in enumerate(blocks, start=1):
        if n > 1 and not blk.pooled:
            raise ValueError("block %d must contain a pooling site" % n)
        if not blk.outer:
            raise ValueError("block %d has no pre-pool convs" % n)
        if blk.pooled and not blk.inner:
            raise ValueError("pooled block %d has no post-pool convs" % n)
        chain = list(blk.outer) + list(blk.inner)
        for (i, o) in chain:
            if prev_out is not None and i != prev_out:
                raise ValueError("channel chain breaks at block %d: %d feeds a "
                                 "conv expecting %d" % (n, prev_out, i))
            prev_out = o


def model_config(preset="tiny", depth=4, skip_variant="hf_residual",
                 precision="double", blocks=None):
    """Build and validate a ModelConfig; presets derive their blocks."""
    if preset not in PRESETS:
        raise ValueError("unknown preset %r (choices: %s)" % (preset, ", ".join(PRESETS)))
    if depth not in (3, 4):
        raise ValueError("depth must be 3 or 4, got %r" % (depth,))
    if skip_variant not in SKIP_VARIANTS:
        raise ValueError("unknown skip variant %r (choices: %s)"
                         % (skip_variant, ", ".join(SKIP_VARIANTS)))
    if precision not in ("double", "single"):
        raise ValueError("precision must be 'double' or 'single', got %r" % (precision,))
    if preset == "vgg19":
        blocks = _vgg19_blocks(depth)
    elif preset == "tiny":
        blocks = _tiny_blocks(depth)
    else:
        if blocks is None:
            raise ValueError("custom preset needs explicit blocks")
        blocks = tuple(BlockSpec(outer=tuple(map(tuple, b.outer)), pooled=b.pooled,
                                 inner=tuple(map(tuple, b.inner))) for b in blocks)
        if len(blocks) != depth:
            raise ValueError("custom blocks count %d != depth %d" % (len(blocks), depth))
    _validate_blocks(blocks)
    return ModelConfig(preset=preset, depth=depth, skip_variant=skip_variant,
                       precision=precision, blocks=blocks)


def _encoder_convs(config, level):
    """(name, in_c, out_c) for block `level`, in forward order."""
    blk = config.blocks[level - 1]
    out = []
    for i, (ci, co) in enumerate(list(blk.outer) + list(blk.inner)):
        out.append(("enc%d.conv%d" % (level, i), ci, co))
    return out


def _decoder_plan(config, level):
    """Forward-order decoder steps for one block.

    Yields ("conv", name, in_c, out_c, emits_image) and ("merge",) steps.
    """
    blk = config.blocks[level - 1]
    steps = []
    convs = []
    for (ci, co) in reversed(blk.inner):
        convs.append((co, ci))
    merge_at = len(convs) if blk.pooled else None
    first_after_merge = len(convs) if blk.pooled else None
    for (ci, co) in reversed(blk.outer):
        convs.append((co, ci))
    idx = 0
    for j, (ci, co) in enumerate(convs):
        if merge_at is not None and j == merge_at:
            steps.append(("merge", None, None, None, False))
        if (j == first_after_merge and config.skip_variant == "wavelet_concat"):
            ci = 4 * ci
        emits_image = (level == 1 and j == len(convs) - 1)
        steps.append(("conv", "dec%d.conv%d" % (level, idx), ci, co, emits_image))
        idx += 1
    return steps


def _conv(x, weights, name, trailing_relu=True):
    try:
        p = ConvParams(weights=weights[name + ".weight"], bias=weights[name + ".bias"],
                       stride=1, padding=1, pad_mode="reflect")
    except KeyError as e:
        raise KeyError("model weights are missing %s" % e) from None
    y = ops.conv2d(x, p)
    return ops.relu(y) if trailing_relu else y


def _pool_split(x, variant, capture):
    """Halve resolution at a pooling site; optionally capture the payload."""
    if variant == "hf_residual":
        if capture:
            skip = wavelet.hf_residual_split(x)
            return skip.low, skip
        xp, _ = wavelet.pad_to_even(x)
        return ops.avg_pool_2x2(xp), None
    if variant == "none":
        xp, rec = wavelet.pad_to_even(x)
        return ops.avg_pool_2x2(xp), (rec if capture else None)
    if variant == "max_indices":
        xp, rec = wavelet.pad_to_even(x)
        pooled, idx = ops.max_pool_2x2(xp)
        return pooled, (MaxSkip(index_map=idx, rec=rec) if capture else None)
    if variant == "wavelet_concat":
        if capture:
            bands = wavelet.wavelet_pool(x)
            return bands.ll, bands
        xp, _ = wavelet.pad_to_even(x)
        return ops.depthwise_conv_stride2(xp, wavelet.haar_kernels()[0]), None
    raise ValueError("unknown skip variant %r" % (variant,))


def _merge(x, payload, variant, level):
    if payload is None:
        raise ValueError("missing skip payload for level %d (variant %s)"
                         % (level, variant))
    if variant == "none":
        if not isinstance(payload, PadRecord):
            raise ValueError("level %d payload is %s, expected PadRecord"
                             % (level, type(payload).__name__))
        return wavelet.crop_to_record(ops.upsample_nearest_2x(x), payload)
    if variant == "max_indices":
        if not isinstance(payload, MaxSkip):
            raise ValueError("level %d payload is %s, expected MaxSkip"
                             % (level, type(payload).__name__))
        return wavelet.crop_to_record(ops.max_unpool_2x2(x, payload.index_map),
                                      payload.rec)
    if variant == "wavelet_concat":
        if not isinstance(payload, WaveletBands):
            raise ValueError("level %d payload is %s, expected WaveletBands"
                             % (level, type(payload).__name__))
        return wavelet.wavelet_unpool(payload, low=x)
    if variant == "hf_residual":
        if not isinstance(payload, ResidualSkip):
            raise ValueError("level %d payload is %s, expected ResidualSkip"
                             % (level, type(payload).__name__))
        return wavelet.hf_residual_merge(x, payload)
    raise ValueError("unknown skip variant %r" % (variant,))


def encode(image, config, weights, upto=None, capture_skips=True):
    """Run the encoder, returning (bottleneck, taps, skips).

    taps[N] is block N's final activation (the level-N feature). skips[N]
    holds the pooling payload captured in block N; with capture_skips False
    only the trunk is computed, which is what re-encoding a reconstruction
    inside a loss needs.
    """
    depth = config.depth if upto is None else upto
    if not 1 <= depth <= config.depth:
        raise ValueError("encode upto=%r outside 1..%d" % (upto, config.depth))
    in_c = config.blocks[0].outer[0][0]
    shape = ops._data(image).shape
    if len(shape) != 4 or shape[1] != in_c:
        raise ValueError("encoder expects (n, %d, h, w) images, got %s" % (in_c, shape))
    x = image
    taps = {}
    skips = {}
    for level in range(1, depth + 1):
        blk = config.blocks[level - 1]
        names = _encoder_convs(config, level)
        pos = 0
        for _ in blk.outer:
            x = _conv(x, weights, names[pos][0])
            pos += 1
        if blk.pooled:
            x, payload = _pool_split(x, config.skip_variant, capture_skips)
            if capture_skips:
                skips[level] = payload
        for _ in blk.inner:
            x = _conv(x, weights, names[pos][0])
            pos += 1
        taps[level] = x
    return x, taps, skips


def decode(x, skips, config, weights, start_level=None, stop_level=1, tap_hook=None):
    """Run decoder blocks start_level..stop_level (inclusive, descending).

    x must be a level-`start_level` feature. tap_hook(level, feature), when
    given, may replace each intermediate feature as decoding passes level
    D-1 .. 1; it is how stylization edits features mid-decode. Returns the
    image when stop_level is 1, else the level (stop_level - 1) feature.
    """
    start = config.depth if start_level is None else start_level
    if not 1 <= stop_level <= start <= config.depth:
        raise ValueError("decode range %r..%r invalid for depth %d"
                         % (start_level, stop_level, config.depth))
    for level in range(start, stop_level - 1, -1):
        for step, name, _, _, emits_image in _decoder_plan(config, level):
            if step == "merge":
                x = _merge(x, skips.get(level), config.skip_variant, level)
            else:
                x = _conv(x, weights, name, trailing_relu=not emits_image)
        if level > 1 and tap_hook is not None:
            x = tap_hook(level - 1, x)
    return x


def decode_block(level, x, skips, config, weights):
    """One decoder block: level-N feature in, level-(N-1) feature out."""
    return decode(x, skips, config, weights, start_level=level, stop_level=level)


@dataclass
class ParamCount:
    total: int
    encoder: int
    decoder: int
    mainstream_layers: int


def count_parameters(config):
    """Weights+biases of every conv, and the main-path layer count.

    The layer count covers convs, pooling sites, and their decoder merge
    sites; skip-branch arithmetic (the payload computation) is not a layer.
    """
    enc = dec = 0
    enc_layers = dec_layers = 0
    for level in range(1, config.depth + 1):
        for _, ci, co in _encoder_convs(config, level):
            enc += co * ci * 9 + co
            enc_layers += 1
        if config.blocks[level - 1].pooled:
            enc_layers += 1
        for step, _, ci, co, _ in _decoder_plan(config, level):
            if step == "merge":
                dec_layers += 1
            else:
                dec += co * ci * 9 + co
                dec_layers += 1
    return ParamCount(total=enc + dec, encoder=enc, decoder=dec,
                      mainstream_layers=enc_layers + dec_layers)


# The frozen encoder stands in for a pretrained feature stack, so its one
# job is to be rich but invertible: a decoder must be able to undo it from
# desk-scale training. Width-preserving convs lean on the identity with a
# random mixing perturbation; width-growing convs emit sign-paired
# projections (u, -u), whose relu responses keep u recoverable, with the
# projection rows rotated slightly off the center-pixel directions. Every
# kernel is scaled by _GAIN so the decoder weights that undo it sit near
# 1/_GAIN, well inside the distance an optimizer covers in a short run.
_MIX = 0.15
_GAIN = 3.0


def _orthonormal_rows(rng, rows, dim):
    a = rng.standard_normal((dim, rows))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q.T


def _encoder_kernel(rng, out_c, in_c):
    fan = in_c * 9
    center = 4  # flattened offset of the kernel center, times in_c stride
    if out_c == in_c:
        w = np.zeros((out_c, fan))
        for ci in range(in_c):
            w[ci, ci * 9 + center] = 1.0
        w += rng.standard_normal((out_c, fan)) * (_MIX / np.sqrt(fan))
    elif out_c % 2:
        w = _orthonormal_rows(rng, out_c, fan)
    else:
        pairs = out_c // 2
        seed_rows = np.zeros((pairs, fan))
        for j in range(min(pairs, in_c)):
            seed_rows[j, j * 9 + center] = 1.0
        for j in range(in_c, pairs):
            seed_rows[j] = rng.standard_normal(fan) / np.sqrt(fan)
        seed_rows = seed_rows + rng.standard_normal((pairs, fan)) * (_MIX / np.sqrt(fan))
        q, r = np.linalg.qr(seed_rows.T)
        u = (q * np.sign(np.diag(r))).T
        w = np.concatenate([u, -u], axis=0)
    return (_GAIN * w).reshape(out_c, in_c, 3, 3)


def _decoder_kernel(rng, out_c, in_c):
    bound = np.sqrt(1.0 / (in_c * 9))
    return rng.uniform(-bound, bound, size=(out_c, in_c, 3, 3))


def init_weights(config, seed=0):
    """Deterministic fresh weights for every conv in the model.

    Encoder kernels are sign-paired semi-orthogonal projections (a fixed
    stand-in for a pretrained feature stack); decoder kernels are fan-in
    scaled uniform. All values are rounded through float32 so that saving
    and reloading reproduces them bit for bit.
    """
    rng = np.random.default_rng(np.random.PCG64(seed))
    dtype = config.dtype
    weights = {}
    for level in range(1, config.depth + 1):
        for name, ci, co in _encoder_convs(config, level):
            w = _encoder_kernel(rng, co, ci)
            weights[name + ".weight"] = w.astype(np.float32).astype(dtype)
            weights[name + ".bias"] = np.zeros(co, dtype=dtype)
        for step, name, ci, co, _ in _decoder_plan(config, level):
            if step == "conv":
                w = _decoder_kernel(rng, co, ci)
                weights[name + ".weight"] = w.astype(np.float32).astype(dtype)
                weights[name + ".bias"] = np.zeros(co, dtype=dtype)
    return weights


def param_shapes(config):
    """Expected weight-dict keys and shapes, for validation on load."""
    shapes = {}
    for level in range(1, config.depth + 1):
        for name, ci, co in _encoder_convs(config, level):
            shapes[name + ".weight"] = (co, ci, 3, 3)
            shapes[name + ".bias"] = (co,)
        for step, name, ci, co, _ in _decoder_plan(config, level):
            if step == "conv":
                shapes[name + ".weight"] = (co, ci, 3, 3)
                shapes[name + ".bias"] = (co,)
    return shapes


def decoder_param_names(config, level=None):
    """Flat weight-dict keys for the decoder, optionally one block's."""
    names = []
    levels = range(1, config.depth + 1) if level is None else [level]
    for lv in levels:
        for step, name, _, _, _ in _decoder_plan(config, lv):
            if step == "conv":
                names.extend([name + ".weight", name + ".bias"])
    return names
