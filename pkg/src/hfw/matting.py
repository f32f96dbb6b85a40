"""Closed-form matting Laplacian, the photorealism regularizer's kernel.

One full 3x3 window slides over every interior pixel; each window
contributes a 9x9 block built from its color mean and covariance under the
standard rank-3 local color-line model. Entries accumulate into a sparse
P x P matrix (P = pixel count) that is symmetric, PSD, and annihilates
constants.
"""

import numpy as np
from scipy import sparse

WINDOW = 3
DEFAULT_EPS = 1e-7


def matting_laplacian(img, window=WINDOW, eps=DEFAULT_EPS):
    """Sparse matting Laplacian of a (3, h, w) image in [0, 1].

    Only odd square windows are meaningful; anything but 3 is refused since
    the rank-3 correction below hard-codes the color dimension, not the
    window. Returns scipy CSR of shape (h*w, h*w).
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError("expected a (3, h, w) image, got %s" % (img.shape,))
    if window != 3:
        raise ValueError("only 3x3 windows are supported, got %r" % (window,))
    c, h, w = img.shape
    if h < window or w < window:
        raise ValueError("image %dx%d smaller than the %dx%d window"
                         % (h, w, window, window))
    win = window * window
    r = window // 2

    # gather every full window's pixel indices: (k, 9)
    ci, cj = np.meshgrid(np.arange(r, h - r), np.arange(r, w - r), indexing="ij")
    di, dj = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    idx = ((ci.reshape(-1, 1) + di.reshape(-1)) * w
           + (cj.reshape(-1, 1) + dj.reshape(-1)))  # (k, 9)
    cols = img.reshape(c, -1)
    pix = cols[:, idx]                       # (3, k, 9)
    mu = pix.mean(axis=2, keepdims=True)
    d = pix - mu                             # centered
    cov = np.einsum("akw,bkw->kab", d, d) / win
    cov += (eps / win) * np.eye(c)
    inv = np.linalg.inv(cov)
    # window block: delta_ij/1 - (1 + d_i' inv d_j)/9
    quad = np.einsum("akw,kab,bkv->kwv", d, inv, d)
    block = np.eye(win) - (1.0 + quad) / win

    rows = np.repeat(idx, win, axis=1).reshape(-1)
    colsix = np.tile(idx, (1, win)).reshape(-1)
    m = sparse.coo_matrix((block.reshape(-1), (rows, colsix)),
                          shape=(h * w, h * w))
    return m.tocsr()


def quadratic_form(lap, channel):
    """x' L x for one (h, w) image channel against a matting Laplacian."""
    v = np.asarray(channel, dtype=np.float64).reshape(-1)
    if v.size != lap.shape[0]:
        raise ValueError("channel has %d pixels, Laplacian expects %d"
                         % (v.size, lap.shape[0]))
    return float(v @ (lap @ v))
