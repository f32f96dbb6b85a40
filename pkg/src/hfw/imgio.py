"""Image file IO.

Binary PPM (P6) and PGM (P5) are read and written natively and are the
interchange formats every command guarantees bit-exact round trips for.
PNG works as a convenience when Pillow is importable. Pixel data crosses
this boundary as float arrays in [0, 1], shaped (3, h, w); label maps stay
integer (h, w).
"""

from __future__ import annotations

import numpy as np


def _read_header_tokens(f, count):
    """Read whitespace-separated header tokens, honoring # comments."""
    tokens = []
    while len(tokens) < count:
        line = f.readline()
        if not line:
            raise ValueError("truncated image header")
        hash_at = line.find(b"#")
        if hash_at != -1:
            line = line[:hash_at]
        tokens.extend(line.split())
    return tokens


def _read_pnm(path, magic, channels):
    with open(path, "rb") as f:
        tokens = _read_header_tokens(f, 4)
        if tokens[0] != magic:
            raise ValueError("%s is not a %s file (starts with %r)"
                             % (path, magic.decode(), tokens[0]))
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        if not (0 < maxval <= 255):
            raise ValueError("%s: unsupported max value %d (8-bit only)" % (path, maxval))
        data = f.read(w * h * channels)
    if len(data) < w * h * channels:
        raise ValueError("%s: truncated pixel data" % path)
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, channels), maxval


def read_ppm(path):
    """P6 file to float (3, h, w) in [0, 1]."""
    raw, maxval = _read_pnm(path, b"P6", 3)
    return raw.transpose(2, 0, 1).astype(np.float64) / maxval


def write_ppm(path, img):
    """Float (3, h, w) in [0, 1] to a P6 file (values clipped, rounded)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError("write_ppm expects (3, h, w), got %s" % (img.shape,))
    u8 = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = img.shape[1], img.shape[2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(u8.transpose(1, 2, 0).tobytes())


def read_pgm(path):
    """P5 file to an integer (h, w) array (raw values, not scaled)."""
    raw, _ = _read_pnm(path, b"P5", 1)
    return raw[:, :, 0].astype(np.int64)


def write_pgm(path, arr):
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError("write_pgm expects (h, w), got %s" % (arr.shape,))
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("write_pgm values must fit in 0..255")
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (arr.shape[1], arr.shape[0]))
        f.write(arr.astype(np.uint8).tobytes())


def _pillow(path):
    try:
        from PIL import Image
    except ImportError:
        raise ValueError("reading %s needs Pillow; use .ppm/.pgm for the "
                         "built-in formats" % path) from None
    return Image


def read_image(path):
    """Color image at `path` to float (3, h, w) in [0, 1]."""
    p = str(path)
    if p.lower().endswith(".ppm"):
        return read_ppm(p)
    if p.lower().endswith(".pgm"):
        g = read_pgm(p).astype(np.float64) / 255.0
        return np.repeat(g[None], 3, axis=0)
    img = _pillow(p).open(p).convert("RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def write_image(path, img):
    p = str(path)
    if p.lower().endswith(".ppm"):
        write_ppm(p, img)
        return
    Image = _pillow(p)
    u8 = np.rint(np.clip(np.asarray(img), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8.transpose(1, 2, 0), mode="RGB").save(p)


def read_label_map(path):
    """Integer (h, w) labels from a PGM or paletted/gray PNG."""
    p = str(path)
    if p.lower().endswith(".pgm"):
        return read_pgm(p)
    img = _pillow(p).open(p)
    if img.mode not in ("L", "P", "I"):
        img = img.convert("L")
    return np.asarray(img, dtype=np.int64)


def bilinear_resize(img, out_h, out_w):
    """Resize (c, h, w) float data with bilinear sampling."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError("bilinear_resize expects (c, h, w), got %s" % (img.shape,))
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy
