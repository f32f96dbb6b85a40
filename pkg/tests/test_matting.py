import numpy as np
import pytest
from scipy.sparse.linalg import eigsh

from hfw.matting import matting_laplacian, quadratic_form, DEFAULT_EPS
from oracles import matting_laplacian_oracle


def rand_img(h, w, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(3, h, w))


def test_matches_windowed_oracle():
    img = rand_img(4, 5, seed=3)
    lap = matting_laplacian(img).toarray()
    ref = matting_laplacian_oracle(img, eps=DEFAULT_EPS)
    assert np.max(np.abs(lap - ref)) < 1e-10


def test_symmetric():
    lap = matting_laplacian(rand_img(8, 8, seed=1))
    diff = (lap - lap.T).tocoo()
    assert np.max(np.abs(diff.data)) < 1e-10 if diff.nnz else True


def test_rows_sum_to_zero():
    lap = matting_laplacian(rand_img(8, 8, seed=2))
    sums = np.asarray(lap.sum(axis=1)).ravel()
    assert np.max(np.abs(sums)) < 1e-8


def test_positive_semidefinite():
    lap = matting_laplacian(rand_img(8, 8, seed=4)).toarray()
    evals = np.linalg.eigvalsh(0.5 * (lap + lap.T))
    assert evals.min() > -1e-8


def test_annihilates_constants():
    lap = matting_laplacian(rand_img(6, 7, seed=5))
    assert abs(quadratic_form(lap, np.full((6, 7), 0.37))) < 1e-10


def test_smooth_channel_scores_below_noisy():
    img = rand_img(8, 8, seed=6)
    lap = matting_laplacian(img)
    rng = np.random.default_rng(7)
    smooth = np.tile(np.linspace(0.0, 1.0, 8), (8, 1))
    noisy = rng.uniform(0.0, 1.0, size=(8, 8))
    assert quadratic_form(lap, smooth) < quadratic_form(lap, noisy)


def test_guide_channels_near_null_space():
    # the color-line model reproduces the guide's own channels up to eps
    img = rand_img(8, 8, seed=8)
    lap = matting_laplacian(img)
    noise = quadratic_form(lap, np.random.default_rng(9).uniform(size=(8, 8)))
    for ch in range(3):
        assert quadratic_form(lap, img[ch]) < 1e-2 * noise


def test_sparsity_pattern():
    # interactions only between pixels sharing a window: distance <= 2
    h = w = 6
    lap = matting_laplacian(rand_img(h, w, seed=10)).tocoo()
    ri, rj = np.divmod(lap.row, w)
    ci, cj = np.divmod(lap.col, w)
    mask = np.abs(lap.data) > 1e-14
    assert np.max(np.abs(ri - ci)[mask]) <= 2
    assert np.max(np.abs(rj - cj)[mask]) <= 2


def test_eigsh_runs_on_sparse():
    lap = matting_laplacian(rand_img(10, 10, seed=11))
    vals = eigsh(lap, k=1, which="LM", return_eigenvectors=False)
    assert vals[0] > 0


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        matting_laplacian(np.zeros((1, 4, 4)))
    with pytest.raises(ValueError):
        matting_laplacian(np.zeros((3, 2, 4)))
    with pytest.raises(ValueError):
        matting_laplacian(np.zeros((3, 4, 4)), window=5)
    lap = matting_laplacian(rand_img(4, 4, seed=12))
    with pytest.raises(ValueError):
        quadratic_form(lap, np.zeros((3, 3)))
