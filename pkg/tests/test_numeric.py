import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from diec.errors import ParameterError, ShapeError, SingularityError
from diec.numeric import (cholesky_logdet, explained_variance, gaussian, moving_average_centered,
                          pca_fit_transform, substream, top_fraction_count)


def random_spd(rng, n):
    A = rng.standard_normal((n, n))
    return A @ A.T + n * np.eye(n)


def test_logdet_identity_and_diag():
    assert cholesky_logdet(np.eye(3), jitter=0) == 0.0
    assert cholesky_logdet(np.diag([2.0, 3.0]), jitter=0) == pytest.approx(1.7917595, abs=1e-7)


def test_logdet_matches_eigen_oracle(rng):
    for _ in range(20):
        A = random_spd(rng, 5)
        oracle = np.sum(np.log(np.linalg.eigvalsh(A)))
        assert cholesky_logdet(A, jitter=0) == pytest.approx(oracle, abs=1e-9)


def test_logdet_errors():
    with pytest.raises(ShapeError):
        cholesky_logdet(np.ones((2, 3)))
    with pytest.raises(ParameterError):
        cholesky_logdet(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(SingularityError):
        cholesky_logdet(np.array([[1.0, 0.0], [0.0, -1.0]]), jitter=0)


def test_logdet_jitter_rescues_rank_deficient():
    v = np.array([[1.0], [2.0]])
    assert np.isfinite(cholesky_logdet(v @ v.T, jitter=1e-6))


def test_pca_constant_rows_project_to_zero():
    X = np.tile([1.0, 2.0, 3.0], (6, 1))
    _, Y = pca_fit_transform(X, 1)
    assert np.all(Y == 0)


def test_pca_rank_one_line_reconstructs_exactly(rng):
    s = rng.standard_normal(20)
    X = np.stack([s, 2 * s], axis=1)
    basis, Y = pca_fit_transform(X, 1)
    recon = Y @ basis.T + X.mean(0)
    np.testing.assert_allclose(recon, X, atol=1e-12)


def test_pca_explained_variance_matches_eig_oracle(rng):
    X = rng.standard_normal((50, 8)) @ rng.standard_normal((8, 8))
    _, Y = pca_fit_transform(X, 3)
    cov = np.cov(X, rowvar=False)
    oracle = np.sort(np.linalg.eigvalsh(cov))[::-1][:3]
    np.testing.assert_allclose(explained_variance(Y), oracle, rtol=1e-8)


def test_pca_gram_path_agrees_with_covariance_path(rng):
    X = rng.standard_normal((12, 30))
    _, Y = pca_fit_transform(X, 4)
    Xc = X - X.mean(0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    np.testing.assert_allclose(np.abs(Y), np.abs(Xc @ vt[:4].T), atol=1e-9)


def test_pca_sign_rule(rng):
    basis, _ = pca_fit_transform(rng.standard_normal((40, 6)), 3)
    for j in range(3):
        assert basis[np.argmax(np.abs(basis[:, j])), j] > 0
    np.testing.assert_allclose(basis.T @ basis, np.eye(3), atol=1e-10)


def test_pca_bad_dimension(rng):
    with pytest.raises(ParameterError):
        pca_fit_transform(rng.standard_normal((5, 3)), 4)
    with pytest.raises(ParameterError):
        pca_fit_transform(rng.standard_normal((5, 3)), 0)


def test_moving_average_examples():
    np.testing.assert_allclose(moving_average_centered([1, 2, 3, 4, 5], 3), [1.5, 2, 3, 4, 4.5])
    x = [3.0, -1.0, 7.0, 2.0]
    np.testing.assert_array_equal(moving_average_centered(x, 1), x)
    with pytest.raises(ParameterError):
        moving_average_centered(x, 4)


@given(st.floats(-1e6, 1e6, allow_nan=False), st.integers(1, 30), st.integers(0, 7))
def test_moving_average_of_constant(c, n, half):
    out = moving_average_centered(np.full(n, c), 2 * half + 1)
    np.testing.assert_allclose(out, c, rtol=1e-12, atol=1e-9)


@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-100, 100)), st.integers(0, 5))
def test_moving_average_bounded_by_series(x, half):
    out = moving_average_centered(x, 2 * half + 1)
    assert np.all(out <= x.max() + 1e-9) and np.all(out >= x.min() - 1e-9)


def test_top_fraction_count():
    assert top_fraction_count(5, 0.2) == 1
    assert top_fraction_count(5, 0.4) == 2
    assert top_fraction_count(40, 0.2) == 8
    assert top_fraction_count(7, 1.0) == 7


def test_substreams_are_addressable():
    a = gaussian(substream(3, "noise", 10, 2), (4,))
    b = gaussian(substream(3, "noise", 10, 2), (4,))
    c = gaussian(substream(3, "noise", 10, 3), (4,))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.dtype == np.float32
