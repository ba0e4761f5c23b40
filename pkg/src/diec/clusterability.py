"""k-means, scatter matrices, Scott Score, PCA alignment and score grids."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError, SingularityError
from .numeric import cholesky_logdet, moving_average_centered, pca_fit_transform, top_fraction_count

KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 300
# ridge on the whitened within-scatter; eigenvalues of T below RANK_TOL * max are treated as zero
SCOTT_RIDGE = 1e-9
RANK_TOL = 1e-12


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations: int


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _inertia(X, C, labels) -> float:
    return float(((X - C[labels]) ** 2).sum())


def _kmeanspp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    N = X.shape[0]
    centers = [X[rng.integers(N)]]
    closest = ((X - centers[0]) ** 2).sum(1)
    for _ in range(1, K):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(N)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, N - 1)
        centers.append(X[idx])
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(1))
    return np.array(centers)


def _lloyd(X, C, max_iter, check_monotone):
    labels = np.argmin(_sq_dists(X, C), axis=1)
    prev = _inertia(X, C, labels)
    it = 0
    for it in range(1, max_iter + 1):
        newC = C.copy()
        for k in range(C.shape[0]):
            members = labels == k
            if members.any():
                newC[k] = X[members].mean(0)
        C = newC
        new_labels = np.argmin(_sq_dists(X, C), axis=1)
        # keep the previous label on exact distance ties so the fixpoint is stable
        cur = _inertia(X, C, new_labels)
        if check_monotone and cur > prev * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"k-means inertia increased: {prev} -> {cur}")
        prev = cur
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return C, labels, it


def kmeans(E, K: int, rng: np.random.Generator, restarts: int = KMEANS_RESTARTS,
           max_iter: int = KMEANS_MAX_ITER, check_monotone: bool = False) -> KMeansResult:
    """Best-inertia k-means over ``restarts`` k-means++ seedings."""
    X = np.asarray(E, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("kmeans expects an N x d matrix")
    N = X.shape[0]
    if not (1 <= K <= N):
        raise ParameterError(f"need 1 <= K <= N, got K={K}, N={N}")
    best = None
    for _ in range(max(1, restarts)):
        C0 = _kmeanspp(X, K, rng)
        C, labels, it = _lloyd(X, C0, max_iter, check_monotone)
        inertia = _inertia(X, C, labels)
        if best is None or inertia < best.inertia:
            best = KMeansResult(C, labels, inertia, it)
    return best


def scatter_matrices(E, assignments, centroids):
    """Within-cluster W and between-cluster B scatter (float64, symmetric)."""
    X = np.asarray(E, dtype=np.float64)
    a = np.asarray(assignments)
    C = np.asarray(centroids, dtype=np.float64)
    if X.ndim != 2 or C.ndim != 2 or C.shape[1] != X.shape[1] or a.shape != (X.shape[0],):
        raise ShapeError("dimension mismatch between embeddings, assignments and centroids")
    if a.size and (a.min() < 0 or a.max() >= C.shape[0]):
        raise ShapeError("assignment index out of range")
    diff = X - C[a]
    W = diff.T @ diff
    mean = X.mean(0)
    counts = np.bincount(a, minlength=C.shape[0]).astype(np.float64)
    dm = C - mean
    B = (dm * counts[:, None]).T @ dm
    return 0.5 * (W + W.T), 0.5 * (B + B.T)


def total_scatter(E) -> np.ndarray:
    X = np.asarray(E, dtype=np.float64)
    Xc = X - X.mean(0)
    return Xc.T @ Xc


def scott_from_assignments(E, assignments, centroids, jitter: float = SCOTT_RIDGE) -> float:
    """N (log det T - log det W), evaluated as -N log det of W in T-whitened coordinates.

    Whitening by T makes the value depend only on the generalized eigenvalues
    of (W, T), so the ridge (added to both sides, relative to the identity)
    does not break affine invariance.  Null directions of T carry no scatter
    and are dropped.
    """
    X = np.asarray(E, dtype=np.float64)
    W, B = scatter_matrices(X, assignments, centroids)
    T = W + B
    if not np.any(T):
        raise SingularityError("all embeddings identical: scatter matrices vanish")
    lam, V = np.linalg.eigh(T)
    keep = lam > RANK_TOL * lam.max()
    U = V[:, keep] / np.sqrt(lam[keep])
    M = U.T @ W @ U
    I = np.eye(M.shape[0])
    return X.shape[0] * (cholesky_logdet((1.0 + jitter) * I, 0.0) - cholesky_logdet(0.5 * (M + M.T) + jitter * I, 0.0))


def scott_score(E, K: int, rng: np.random.Generator, restarts: int = KMEANS_RESTARTS,
                max_iter: int = KMEANS_MAX_ITER, jitter: float = SCOTT_RIDGE) -> float:
    """N (log det T - log det W) for the k-means partition of E."""
    X = np.asarray(E, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ShapeError("scott_score expects an N x d matrix with d >= 1")
    if X.shape[0] <= K:
        raise ParameterError(f"scott_score needs N > K (N={X.shape[0]}, K={K})")
    if np.all(X == X[0]):
        raise SingularityError("all embeddings identical: scatter matrices vanish")
    km = kmeans(X, K, rng, restarts=restarts, max_iter=max_iter)
    return scott_from_assignments(X, km.assignments, km.centroids, jitter)


def row_normalize(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    # pre-scale by the largest entry so tiny rows do not underflow when squared
    peak = np.abs(Y).max(axis=1, keepdims=True) if Y.shape[1] else np.zeros((Y.shape[0], 1))
    out = np.zeros_like(Y)
    nz = peak[:, 0] > 0
    Ys = Y[nz] / peak[nz]
    out[nz] = Ys / np.linalg.norm(Ys, axis=1, keepdims=True)
    return out


def align_embeddings(E, d: int) -> np.ndarray:
    """PCA to d dimensions followed by row-wise l2 normalization."""
    X = np.asarray(E, dtype=np.float64)
    if X.ndim != 2 or not (1 <= d <= min(X.shape[0] - 1, X.shape[1])):
        raise ParameterError(f"alignment dimension {d} out of range for shape {X.shape}")
    _, Y = pca_fit_transform(X, d)
    return row_normalize(Y)


def layer_score_top_rho(row, rho: float) -> float:
    """Mean of the ceil(rho * |row|) largest values."""
    x = np.asarray(row, dtype=np.float64).ravel()
    if x.size == 0:
        raise ParameterError("empty score row")
    if not (0 < rho <= 1):
        raise ParameterError(f"rho must lie in (0, 1], got {rho}")
    k = top_fraction_count(x.size, rho)
    return float(np.sort(x)[::-1][:k].mean())


@dataclass
class ScoreGrid:
    layers: list
    timesteps: list
    raw: np.ndarray
    window: int
    aligned: bool = True
    smoothed: np.ndarray = field(default=None)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64)
        if self.raw.shape != (len(self.layers), len(self.timesteps)):
            raise ShapeError("score grid shape does not match its axes")
        if self.smoothed is None:
            self.smoothed = np.stack([moving_average_centered(r, self.window) for r in self.raw]) \
                if self.raw.size else self.raw.copy()

    def layer_scores(self, rho: float) -> np.ndarray:
        return np.array([layer_score_top_rho(r, rho) for r in self.smoothed])

    def to_csv_rows(self, which: str = "smoothed"):
        data = self.smoothed if which == "smoothed" else self.raw
        header = ["layer"] + [str(t) for t in self.timesteps]
        rows = [[l] + [float(v) for v in data[i]] for i, l in enumerate(self.layers)]
        return header, rows
