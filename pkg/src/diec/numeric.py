"""Dense linear algebra, smoothing and seeded random streams.

Tensors throughout the package are plain ``numpy.ndarray`` (float32 storage)
or ``torch.Tensor`` inside the training code.  Reductions feeding log-dets and
scatter matrices are carried out in float64.
"""
from __future__ import annotations

import hashlib
import math
from typing import Sequence

import numpy as np

from .errors import ParameterError, ShapeError, SingularityError

DEFAULT_JITTER = 1e-6


# --------------------------------------------------------------------------- rng


def _key_to_ints(key: Sequence) -> list[int]:
    out = []
    for k in key:
        if isinstance(k, (int, np.integer)):
            out.append(int(k) & 0xFFFFFFFF)
            out.append((int(k) >> 32) & 0xFFFFFFFF)
        else:
            digest = hashlib.sha256(str(k).encode()).digest()
            out.append(int.from_bytes(digest[:4], "little"))
    return out


def substream(seed: int, *key) -> np.random.Generator:
    """Independent Philox stream addressed by ``(seed, *key)``.

    The same seed and key always give the same stream, whatever else was drawn
    before, so noise for a given (purpose, timestep, trial) is reproducible
    regardless of evaluation order.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF,
                                 *_key_to_ints(key)])
    return np.random.Generator(np.random.Philox(ss))


def gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape, dtype=np.float64).astype(np.float32)


# ---------------------------------------------------------------------- log-det


def cholesky_logdet(A, jitter: float = DEFAULT_JITTER) -> float:
    """log det(A + jitter * mean(diag A) * I) via a Cholesky factor."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"cholesky_logdet needs a square matrix, got shape {A.shape}")
    if A.shape[0] == 0:
        return 0.0
    scale = max(float(np.max(np.abs(A))), 1e-300)
    if not np.allclose(A, A.T, rtol=1e-6, atol=1e-6 * scale):
        raise ParameterError("cholesky_logdet needs a symmetric matrix")
    A = 0.5 * (A + A.T)
    if jitter:
        A = A + jitter * float(np.mean(np.diag(A))) * np.eye(A.shape[0])
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("matrix is not positive definite after jitter") from exc
    d = np.diag(L)
    if not np.all(d > 0) or not np.all(np.isfinite(d)):
        raise SingularityError("non-positive pivot in Cholesky factor")
    return float(2.0 * np.sum(np.log(d)))


# -------------------------------------------------------------------------- PCA


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def pca_fit_transform(X, d: int):
    """Project centered rows of X onto the top-d principal directions.

    Returns ``(basis, Y)`` with ``basis`` of shape (D, d), orthonormal columns,
    and ``Y = (X - mean) @ basis``.  Uses the D x D covariance when N >= D and
    the N x N Gram matrix otherwise.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("pca_fit_transform expects an N x D matrix")
    N, D = X.shape
    if N < 2:
        raise ParameterError("PCA needs at least two rows")
    if not (1 <= d <= min(N - 1, D)):
        raise ParameterError(f"PCA dimension {d} outside [1, {min(N - 1, D)}]")
    Xc = X - X.mean(axis=0)
    if N >= D:
        evals, evecs = np.linalg.eigh(Xc.T @ Xc)
        order = np.argsort(evals)[::-1][:d]
        basis = evecs[:, order]
    else:
        evals, evecs = np.linalg.eigh(Xc @ Xc.T)
        order = np.argsort(evals)[::-1][:d]
        lam = np.clip(evals[order], 0.0, None)
        basis = Xc.T @ evecs[:, order]
        norms = np.sqrt(lam)
        ok = norms > 1e-12 * max(norms.max(initial=0.0), 1e-300)
        basis[:, ok] /= norms[ok]
        if not ok.all():
            # zero-variance directions: complete with an orthonormal basis
            q, _ = np.linalg.qr(np.concatenate([basis[:, ok], np.eye(D)], axis=1))
            basis = np.concatenate([basis[:, ok], q[:, ok.sum():d]], axis=1)
    basis = _fix_signs(basis)
    return basis, Xc @ basis


def explained_variance(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    return Y.var(axis=0, ddof=1) if Y.shape[0] > 1 else np.zeros(Y.shape[1])


# -------------------------------------------------------------------- smoothing


def moving_average_centered(series, w: int) -> np.ndarray:
    """Centered moving average over positions with a shrinking window at the edges."""
    if w < 1 or w % 2 == 0:
        raise ParameterError(f"window must be a positive odd integer, got {w}")
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ParameterError("series must be a non-empty 1-D sequence")
    h = w // 2
    n = x.size
    return np.array([x[max(0, i - h):min(n, i + h + 1)].mean() for i in range(n)])


def top_fraction_count(n: int, rho: float) -> int:
    return max(1, min(n, math.ceil(rho * n - 1e-12)))
