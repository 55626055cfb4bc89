import numpy as np
import pytest
from hypothesis import given, strategies as st

from learnpool.preprocess import (WhiteningTransform, apply_whitening, extract_patches,
                                  fit_whitening, grid_size, normalize_patch)


def brute_windows(n, w, stride):
    """Enumerate top-left corners of every window that fits."""
    return [(r, c) for r in range(0, n) for c in range(0, n)
            if r % stride == 0 and c % stride == 0 and r + w <= n and c + w <= n]


def test_grid_sizes():
    img = np.zeros((32, 32, 3))
    assert extract_patches(img, 6, 1).shape == (27, 27, 108)
    assert len(brute_windows(32, 6, 1)) == 27 * 27
    assert extract_patches(np.zeros((8, 8, 3)), 6, 1).shape[:2] == (3, 3)
    assert len(brute_windows(8, 6, 1)) == 9


def test_single_window_is_whole_image(rng):
    img = rng.uniform(0, 255, (6, 6, 3))
    patches = extract_patches(img, 6)
    assert patches.shape == (1, 1, 108)
    # channel-major: all red rows, then green, then blue
    assert np.array_equal(patches[0, 0], img.transpose(2, 0, 1).ravel())


@given(st.integers(1, 16).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n), st.integers(1, 4))))
def test_window_count_matches_enumeration(args):
    n, w, stride = args
    patches = extract_patches(np.zeros((n, n, 3)), w, stride)
    corners = brute_windows(n, w, stride)
    assert patches.shape[0] * patches.shape[1] == len(corners)
    assert patches.shape[0] == grid_size(n, w, stride)


def test_patch_contents_match_corners(rng):
    img = rng.uniform(0, 255, (10, 10, 3))
    patches = extract_patches(img, 3, 2)
    for m in range(patches.shape[0]):
        for n in range(patches.shape[1]):
            r, c = m * 2, n * 2
            expected = np.concatenate([img[r:r + 3, c:c + 3, ch].ravel() for ch in range(3)])
            assert np.array_equal(patches[m, n], expected)


def test_patch_too_large():
    with pytest.raises(ValueError):
        extract_patches(np.zeros((4, 4, 3)), 5)


def test_normalize_examples():
    assert np.all(normalize_patch(np.full(12, 7.0), 10.0) == 0)
    assert np.all(normalize_patch(np.full(12, 7.0), 0.0) == 0)
    np.testing.assert_allclose(normalize_patch(np.array([1.0, 3.0]), 0.0), [-1.0, 1.0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(normalize_patch(np.array([1.0, 3.0]), 10.0),
                               [-1 / np.sqrt(11), 1 / np.sqrt(11)], rtol=1e-15)


@given(st.lists(st.floats(0, 255), min_size=2, max_size=108))
def test_normalize_moments(values):
    x = np.array(values)
    out = normalize_patch(x, 0.0)
    assert abs(out.mean()) < 1e-12
    if x.var() > 1e-6:
        assert abs(out.var() - 1.0) < 1e-9


def test_whitening_identity_population():
    # +-e_j pairs: zero mean, covariance I under the 1/(N-1) convention after scaling
    d = 4
    X = np.concatenate([np.eye(d), -np.eye(d)]) * np.sqrt((2 * d - 1) / 2)
    t = fit_whitening(X, 0.0)
    np.testing.assert_allclose(np.cov(X, rowvar=False), np.eye(d), atol=1e-12)
    np.testing.assert_allclose(t.matrix, np.eye(d), atol=1e-9)


def _population_with_cov(rng, cov_sqrt, N=500):
    Z = rng.standard_normal((N, cov_sqrt.shape[0]))
    Z -= Z.mean(axis=0)
    L = np.linalg.cholesky(np.cov(Z, rowvar=False))
    Z = Z @ np.linalg.inv(L).T  # exactly identity sample covariance
    return Z @ cov_sqrt.T


def test_whitening_diagonal_closed_form(rng):
    X = _population_with_cov(rng, np.diag([2.0, 1.0])) + np.array([5.0, -3.0])
    t = fit_whitening(X, 0.0)
    np.testing.assert_allclose(t.matrix, np.diag([0.5, 1.0]), atol=1e-9)
    np.testing.assert_allclose(t.mean, [5.0, -3.0], atol=1e-12)


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_whitened_covariance(d, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d)) + 2 * np.eye(d)
    X = rng.normal(size=(400, d)) @ A.T
    t = fit_whitening(X, 0.0)
    assert np.array_equal(t.matrix, t.matrix.T)
    np.testing.assert_allclose(np.cov(apply_whitening(t, X), rowvar=False), np.eye(d), atol=1e-6)
    # regularized: covariance is diag(lambda / (lambda + eps)) in the eigenbasis
    eps = 0.3
    tr = fit_whitening(X, eps)
    lam, U = np.linalg.eigh(np.cov(X, rowvar=False))
    expected = U @ np.diag(lam / (lam + eps)) @ U.T
    np.testing.assert_allclose(np.cov(apply_whitening(tr, X), rowvar=False), expected, atol=1e-6)


def test_apply_whitening_examples():
    t = WhiteningTransform(np.array([1.0, 1.0]), np.diag([0.5, 1.0]), 0.0)
    np.testing.assert_allclose(apply_whitening(t, np.array([3.0, 1.0])), [1.0, 0.0], atol=1e-15)
    assert np.all(apply_whitening(t, t.mean) == 0)
    ident = WhiteningTransform(np.zeros(3), np.eye(3), 0.0)
    x = np.array([1.5, -2.0, 4.0])
    assert np.array_equal(apply_whitening(ident, x), x)
    with pytest.raises(ValueError):
        apply_whitening(ident, np.zeros(4))


def test_fit_whitening_needs_two():
    with pytest.raises(ValueError):
        fit_whitening(np.zeros((1, 3)), 0.1)
