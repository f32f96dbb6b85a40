"""Edge-preserving smoothing used as the stylization postprocess.

Gray-guide guided filter: the guide is collapsed to luma and each channel of
the input is filtered against it. All windowed means come from one cumsum
box filter whose divisor is the true in-bounds window size, so borders are
averaged over what exists rather than padded.
"""

import numpy as np

DEFAULT_EPS = 0.02 ** 2

_LUMA = np.array([0.299, 0.587, 0.114])


def luma(img):
    """Collapse a (3, h, w) image to its (h, w) luma plane."""
    img = np.asarray(img)
    if img.ndim == 2:
        return img
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError("expected (3, h, w) or (h, w), got %s" % (img.shape,))
    return np.tensordot(_LUMA, img, axes=1)


def default_radius(h, w):
    """Window radius scaled from the reference setting of 50 at 768px."""
    return max(4, int(round(50 * min(h, w) / 768.0)))


def box_filter(x, radius):
    """Mean over a (2r+1)² window, normalized by the in-bounds window size."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("box_filter expects a 2-D array, got %s" % (x.shape,))
    summed = _box_sum(x, radius)
    counts = _box_sum(np.ones_like(x), radius)
    return summed / counts


def _box_sum(x, r):
    # cumsum with a leading zero row/col so window sums are two subtractions
    h, w = x.shape
    c = np.zeros((h + 1, w + 1))
    np.cumsum(x, axis=0, out=c[1:, 1:])
    np.cumsum(c[1:, 1:], axis=1, out=c[1:, 1:])
    lo_i = np.clip(np.arange(h) - r, 0, h)
    hi_i = np.clip(np.arange(h) + r + 1, 0, h)
    lo_j = np.clip(np.arange(w) - r, 0, w)
    hi_j = np.clip(np.arange(w) + r + 1, 0, w)
    return (c[np.ix_(hi_i, hi_j)] - c[np.ix_(lo_i, hi_j)]
            - c[np.ix_(hi_i, lo_j)] + c[np.ix_(lo_i, lo_j)])


def guided_filter(guide, image, radius=None, eps=DEFAULT_EPS):
    """Filter `image` so it stays locally affine in the guide.

    guide: (3, h, w) or (h, w); image: (c, h, w) or (h, w), same spatial
    size. Returns an array shaped like `image`.
    """
    if radius is not None and radius < 1:
        raise ValueError("radius must be >= 1, got %r" % (radius,))
    if eps <= 0:
        raise ValueError("eps must be positive, got %r" % (eps,))
    g = luma(guide).astype(np.float64)
    img = np.asarray(image, dtype=np.float64)
    flat = img.ndim == 2
    p = img[None] if flat else img
    if p.ndim != 3 or p.shape[1:] != g.shape:
        raise ValueError("image shape %s does not sit on guide %s"
                         % (img.shape, g.shape))
    h, w = g.shape
    r = default_radius(h, w) if radius is None else int(radius)
    mean_g = box_filter(g, r)
    var_g = box_filter(g * g, r) - mean_g * mean_g
    out = np.empty_like(p)
    for ch in range(p.shape[0]):
        mean_p = box_filter(p[ch], r)
        cov = box_filter(g * p[ch], r) - mean_g * mean_p
        a = cov / (var_g + eps)
        b = mean_p - a * mean_g
        out[ch] = box_filter(a, r) * g + box_filter(b, r)
    result = out[0] if flat else out
    return result.astype(np.asarray(image).dtype, copy=False)
