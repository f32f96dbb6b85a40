"""Checkpoint format: magic, version, config block, named float32 tensors.

Layout (all integers little-endian):

    "HFW1"
    u16  format version (currently 1)
    u32  config length, then that many UTF-8 bytes of key=value lines
    u32  tensor count, then per tensor (sorted by name):
         u32 name length, name bytes,
         u32 rank, u32 dims[rank],
         float32 row-major data
    u32  CRC-32 over everything between the magic and this field

Tensors are stored float32 regardless of model precision; loading casts to
the config's dtype. Any structural mismatch, unknown key, or checksum
failure raises ValueError rather than returning partial weights.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .model import BlockSpec, model_config, param_shapes

MAGIC = b"HFW1"
VERSION = 1


def _blocks_to_str(blocks):
    parts = []
    for blk in blocks:
        chunk = "+".join("%d:%d" % (i, o) for i, o in blk.outer)
        if blk.pooled:
            chunk += ";P;" + "+".join("%d:%d" % (i, o) for i, o in blk.inner)
        parts.append(chunk)
    return "|".join(parts)


def _blocks_from_str(text):
    blocks = []
    for chunk in text.split("|"):
        if ";P;" in chunk:
            outer_s, inner_s = chunk.split(";P;")
            pooled = True
        else:
            outer_s, inner_s = chunk, ""
            pooled = False

        def pairs(s):
            if not s:
                return ()
            return tuple(tuple(int(v) for v in p.split(":")) for p in s.split("+"))

        blocks.append(BlockSpec(outer=pairs(outer_s), pooled=pooled,
                                inner=pairs(inner_s)))
    return tuple(blocks)


def _config_lines(config):
    return ["preset=%s" % config.preset,
            "depth=%d" % config.depth,
            "skip_variant=%s" % config.skip_variant,
            "precision=%s" % config.precision,
            "blocks=%s" % _blocks_to_str(config.blocks)]


def save_weights(path, config, weights):
    """Write a checkpoint; tensor values are cast to float32."""
    expected = param_shapes(config)
    missing = sorted(set(expected) - set(weights))
    extra = sorted(set(weights) - set(expected))
    if missing or extra:
        raise ValueError("weights do not match config (missing %s, extra %s)"
                         % (missing[:3], extra[:3]))
    body = bytearray()
    body += struct.pack("<H", VERSION)
    cfg = ("\n".join(_config_lines(config)) + "\n").encode("utf-8")
    body += struct.pack("<I", len(cfg))
    body += cfg
    names = sorted(weights)
    body += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(np.asarray(weights[name]), dtype="<f4")
        nb = name.encode("utf-8")
        body += struct.pack("<I", len(nb))
        body += nb
        body += struct.pack("<I", arr.ndim)
        body += struct.pack("<%dI" % arr.ndim, *arr.shape)
        body += arr.tobytes(order="C")
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(bytes(body))
        f.write(struct.pack("<I", crc))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ValueError("corrupt weight file: truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_weights(path):
    """Read a checkpoint back as (config, weights dict in config dtype)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 10 or raw[:4] != MAGIC:
        raise ValueError("not a weight file (bad magic): %s" % path)
    body, (crc_stored,) = raw[4:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise ValueError("corrupt weight file (checksum mismatch): %s" % path)
    r = _Reader(body)
    version = r.u16()
    if version != VERSION:
        raise ValueError("unsupported weight format version %d" % version)
    kv = {}
    for line in r.take(r.u32()).decode("utf-8").splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise ValueError("corrupt weight file: bad config line %r" % line)
        key, val = line.split("=", 1)
        kv[key] = val
    for key in ("preset", "depth", "skip_variant", "precision", "blocks"):
        if key not in kv:
            raise ValueError("corrupt weight file: config lacks %r" % key)
    unknown = set(kv) - {"preset", "depth", "skip_variant", "precision", "blocks"}
    if unknown:
        raise ValueError("weight file config has unknown keys: %s" % sorted(unknown))
    blocks = _blocks_from_str(kv["blocks"])
    config = model_config(preset=kv["preset"], depth=int(kv["depth"]),
                          skip_variant=kv["skip_variant"], precision=kv["precision"],
                          blocks=blocks if kv["preset"] == "custom" else None)
    if _blocks_to_str(config.blocks) != kv["blocks"]:
        raise ValueError("weight file blocks %r disagree with preset %r"
                         % (kv["blocks"], kv["preset"]))
    expected = param_shapes(config)
    count = r.u32()
    weights = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        if rank > 8:
            raise ValueError("corrupt weight file: tensor %r has rank %d" % (name, rank))
        shape = struct.unpack("<%dI" % rank, r.take(4 * rank))
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        if name not in expected:
            raise ValueError("weight file has unexpected tensor %r" % name)
        if expected[name] != shape:
            raise ValueError("tensor %r has shape %s, config needs %s"
                             % (name, shape, expected[name]))
        weights[name] = arr.astype(config.dtype)
    missing = sorted(set(expected) - set(weights))
    if missing:
        raise ValueError("weight file is missing tensors: %s" % missing[:5])
    if r.pos != len(body):
        raise ValueError("corrupt weight file: %d trailing bytes" % (len(body) - r.pos))
    return config, weights
