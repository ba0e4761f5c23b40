import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from diec.clusterability import (ScoreGrid, align_embeddings, kmeans, layer_score_top_rho, row_normalize,
                                 scatter_matrices, scott_from_assignments, scott_score, total_scatter)
from diec.errors import ParameterError, SingularityError
from diec.numeric import pca_fit_transform, substream


def test_kmeans_k_equals_n():
    X = np.random.default_rng(0).standard_normal((6, 2))
    r = kmeans(X, 6, substream(0, "k"))
    assert r.inertia == 0.0
    assert sorted(map(tuple, r.centroids)) == sorted(map(tuple, X))


def test_kmeans_two_pairs():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]])
    r = kmeans(X, 2, substream(0, "k"))
    assert sorted(map(tuple, r.centroids)) == [(0.0, 0.5), (10.0, 0.5)]


def test_kmeans_matches_exhaustive_two_partition(rng):
    for _ in range(10):
        X = rng.standard_normal((8, 2))
        best = np.inf
        for bits in itertools.product([0, 1], repeat=8):
            a = np.array(bits)
            if a.min() == a.max():
                continue
            best = min(best, sum(((X[a == k] - X[a == k].mean(0)) ** 2).sum() for k in (0, 1)))
        assert kmeans(X, 2, substream(1, "k")).inertia == pytest.approx(best, rel=1e-12)


@given(st.integers(0, 10_000))
def test_lloyd_inertia_never_increases(seed):
    X = np.random.default_rng(seed).standard_normal((40, 3))
    kmeans(X, 4, substream(seed, "mono"), restarts=2, check_monotone=True)


def test_scatter_special_cases(rng):
    C = rng.standard_normal((3, 2))
    a = np.array([0, 1, 2, 0, 1, 2])
    W, B = scatter_matrices(C[a], a, C)
    assert np.all(W == 0)
    X = rng.standard_normal((10, 3))
    W, B = scatter_matrices(X, np.zeros(10, int), X.mean(0, keepdims=True))
    np.testing.assert_allclose(B, 0, atol=1e-12)
    np.testing.assert_allclose(W, total_scatter(X), rtol=1e-12)


def test_scatter_identity_random(rng):
    X = rng.standard_normal((30, 3))
    a = rng.integers(0, 3, 30)
    C = np.stack([X[a == k].mean(0) for k in range(3)])
    W, B = scatter_matrices(X, a, C)
    oracle = sum(np.outer(x - X.mean(0), x - X.mean(0)) for x in X)
    np.testing.assert_allclose(W + B, oracle, rtol=1e-6)


def test_scott_zero_when_means_coincide():
    X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [2.0, 0.0], [-2.0, 0.0], [0.0, 2.0], [0.0, -2.0]])
    a = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    C = np.zeros((2, 2))
    assert scott_from_assignments(X, a, C) == pytest.approx(0.0, abs=1e-9)


def _direct_ss(X, a, K):
    C = np.stack([X[a == k].mean(0) for k in range(K)])
    Xc = X - X.mean(0)
    T = Xc.T @ Xc
    D = X - C[a]
    W = D.T @ D
    return X.shape[0] * (np.log(np.linalg.det(T)) - np.log(np.linalg.det(W))), C


def test_scott_separated_gaussians_match_direct_determinant():
    rng = np.random.default_rng(3)
    X = np.concatenate([rng.standard_normal((40, 2)), rng.standard_normal((40, 2)) + [20.0, 0.0]])
    a = np.repeat([0, 1], 40)
    oracle, C = _direct_ss(X, a, 2)
    assert scott_from_assignments(X, a, C, jitter=0) == pytest.approx(oracle, rel=1e-6)
    assert scott_score(X, 2, substream(0, "ss"), jitter=0) == pytest.approx(oracle, rel=1e-6)


def test_scott_affine_invariance(rng):
    X = rng.standard_normal((60, 4))
    a = np.arange(60) % 3
    A = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    ref, C = _direct_ss(X, a, 3)
    ss1 = scott_from_assignments(X, a, C, jitter=0)
    ss2 = scott_from_assignments(X @ A.T + 5.0, a, C @ A.T + 5.0, jitter=0)
    assert ss2 == pytest.approx(ss1, rel=1e-5)


def test_scott_ignores_null_directions_of_total_scatter(rng):
    X = rng.standard_normal((50, 3))
    X[:, 1] = 0.0
    padded = np.concatenate([X, X[:, :1] + X[:, 2:]], axis=1)  # rank 2 embedded in 4 dims
    a = np.arange(50) % 2
    C = np.stack([X[a == k].mean(0) for k in range(2)])
    Cp = np.stack([padded[a == k].mean(0) for k in range(2)])
    ref, _ = _direct_ss(X[:, [0, 2]], a, 2)
    assert scott_from_assignments(X, a, C) == pytest.approx(ref, rel=1e-6)
    assert scott_from_assignments(padded, a, Cp) == pytest.approx(ref, rel=1e-6)


def test_scott_errors():
    with pytest.raises(ParameterError):
        scott_score(np.random.default_rng(0).standard_normal((3, 2)), 3, substream(0))
    with pytest.raises(SingularityError):
        scott_score(np.ones((10, 2)), 2, substream(0))


def test_alignment_is_pca_then_normalize(rng):
    X = rng.standard_normal((100, 32))
    _, Y = pca_fit_transform(X, 8)
    np.testing.assert_array_equal(align_embeddings(X, 8), row_normalize(Y))


@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 6)), elements=st.floats(-1e3, 1e3)))
def test_row_norms_are_zero_or_one(Y):
    n = np.linalg.norm(row_normalize(Y), axis=1)
    assert np.all((np.abs(n) < 1e-6) | (np.abs(n - 1) < 1e-6))


def test_unit_rows_are_preserved(rng):
    Y = rng.standard_normal((10, 3))
    Y /= np.linalg.norm(Y, axis=1, keepdims=True)
    np.testing.assert_allclose(np.linalg.norm(row_normalize(Y), axis=1), 1.0)


def test_top_rho_examples():
    assert layer_score_top_rho([5, 1, 1, 1, 1], 0.2) == 5
    assert layer_score_top_rho([3, 7, 2, 9, 5], 0.4) == 8
    assert layer_score_top_rho([3, 7, 2, 9, 5], 1.0) == pytest.approx(5.2)
    with pytest.raises(ParameterError):
        layer_score_top_rho([1.0], 0.0)


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e3, 1e3)), st.floats(0.01, 1.0))
def test_top_rho_between_mean_and_max(row, rho):
    v = layer_score_top_rho(row, rho)
    assert row.mean() - 1e-9 <= v <= row.max() + 1e-9


def test_score_grid_smooths_rows():
    raw = np.array([[1.0, 2, 3, 4, 5], [0, 0, 0, 0, 0]])
    g = ScoreGrid(["A", "B"], [1, 6, 11, 16, 21], raw, window=3)
    np.testing.assert_allclose(g.smoothed[0], [1.5, 2, 3, 4, 4.5])
    header, rows = g.to_csv_rows()
    assert header[0] == "layer" and rows[1][0] == "B"
