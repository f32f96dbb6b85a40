"""Training corpora: generated synthetic images or an image directory.

The synthetic generator layers three ingredients whose reconstruction
stresses different bands: a smooth oriented color gradient (low frequency),
hard-edged rectangles (step edges), and an oriented sinusoid (mid band).
Pixels always land in [0, 1].
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import imgio

IMAGE_EXTENSIONS = (".ppm", ".png", ".jpg", ".jpeg")


@dataclass
class DatasetSpec:
    source: str = "synthetic"
    count: int = 64
    resize: int = 64
    crop: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("dataset count must be >= 1, got %d" % self.count)
        if self.crop > self.resize:
            raise ValueError("crop %d exceeds resize %d" % (self.crop, self.resize))


def synthetic_image(rng, size):
    """One (3, size, size) image in [0, 1]."""
    span = np.linspace(0.0, 1.0, size)
    yy = span[:, None] * np.ones((1, size))
    xx = np.ones((size, 1)) * span[None, :]

    theta = rng.uniform(0.0, 2.0 * np.pi)
    ramp = (np.cos(theta) * xx + np.sin(theta) * yy + 1.0) / 2.0
    c0 = rng.random(3)
    c1 = rng.random(3)
    img = c0[:, None, None] * (1.0 - ramp) + c1[:, None, None] * ramp

    for _ in range(int(rng.integers(2, 5))):
        rh = int(rng.integers(size // 8, size // 2))
        rw = int(rng.integers(size // 8, size // 2))
        y0 = int(rng.integers(0, size - rh + 1))
        x0 = int(rng.integers(0, size - rw + 1))
        img[:, y0:y0 + rh, x0:x0 + rw] = rng.random(3)[:, None, None]

    amp = rng.uniform(0.05, 0.2)
    freq = rng.uniform(2.0, 8.0)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    wave = amp * np.sin(2.0 * np.pi * freq * (np.cos(phi) * xx + np.sin(phi) * yy) + phase)
    img = img + wave[None]

    return np.clip(img, 0.0, 1.0)


def _directory_images(path):
    names = sorted(n for n in os.listdir(path)
                   if n.lower().endswith(IMAGE_EXTENSIONS))
    if not names:
        raise ValueError("no readable images (%s) in %s"
                         % ("/".join(e.lstrip(".") for e in IMAGE_EXTENSIONS), path))
    return [os.path.join(path, n) for n in names]


def load_dataset(spec):
    """Materialize the corpus as one (count, 3, crop, crop) float64 array.

    Synthetic sources draw `count` fresh images; directory sources cycle
    the files as needed. Every image is sized to (resize, resize) and then
    randomly cropped, all driven by spec.seed.
    """
    rng = np.random.default_rng(np.random.PCG64(spec.seed))
    out = np.empty((spec.count, 3, spec.crop, spec.crop))
    if spec.source == "synthetic":
        sources = None
    else:
        sources = _directory_images(spec.source)
    for i in range(spec.count):
        if sources is None:
            img = synthetic_image(rng, spec.resize)
        else:
            img = imgio.read_image(sources[i % len(sources)])
            img = imgio.bilinear_resize(img, spec.resize, spec.resize)
        room = spec.resize - spec.crop
        y0 = int(rng.integers(0, room + 1))
        x0 = int(rng.integers(0, room + 1))
        out[i] = img[:, y0:y0 + spec.crop, x0:x0 + spec.crop]
    return out
