"""External clustering metrics: Hungarian accuracy, NMI (geometric mean), ARI."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ShapeError

log = logging.getLogger(__name__)


@dataclass
class ContingencyTable:
    counts: np.ndarray  # K_true x K_pred

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def rows(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def cols(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def contingency(y_true, y_pred) -> ContingencyTable:
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"label arrays differ in length: {y_true.size} vs {y_pred.size}")
    if y_true.size and (y_true.min() < 0 or y_pred.min() < 0):
        raise ShapeError("labels must be non-negative integers")
    _, ti = np.unique(y_true, return_inverse=True)
    _, pi = np.unique(y_pred, return_inverse=True)
    kt = ti.max() + 1 if ti.size else 0
    kp = pi.max() + 1 if pi.size else 0
    counts = np.zeros((kt, kp), dtype=np.int64)
    np.add.at(counts, (ti, pi), 1)
    return ContingencyTable(counts)


def hungarian_acc(y_true, y_pred) -> float:
    table = contingency(y_true, y_pred)
    if table.n == 0:
        return 0.0
    k = max(table.counts.shape)
    square = np.zeros((k, k), dtype=np.int64)
    square[: table.counts.shape[0], : table.counts.shape[1]] = table.counts
    r, c = linear_sum_assignment(-square)
    return float(square[r, c].sum()) / table.n


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(y_true, y_pred) -> float:
    table = contingency(y_true, y_pred)
    n = table.n
    if n == 0:
        return 0.0
    h_t = _entropy(table.rows, n)
    h_p = _entropy(table.cols, n)
    if h_t == 0.0 and h_p == 0.0:
        log.info("NMI: both partitions have a single cluster; defined as 1.0")
        return 1.0
    if h_t == 0.0 or h_p == 0.0:
        return 0.0
    c = table.counts
    nz = c > 0
    outer = np.outer(table.rows, table.cols)
    mi = float(np.sum(c[nz] / n * np.log(c[nz] * n / outer[nz])))
    return float(min(1.0, max(0.0, mi / np.sqrt(h_t * h_p))))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2.0


def ari(y_true, y_pred) -> float:
    table = contingency(y_true, y_pred)
    n = table.n
    index = float(_comb2(table.counts).sum())
    a = float(_comb2(table.rows).sum())
    b = float(_comb2(table.cols).sum())
    total = float(_comb2(n))
    expected = a * b / total if total > 0 else 0.0
    max_index = 0.5 * (a + b)
    if max_index == expected:
        identical = table.counts.shape[0] == table.counts.shape[1] and np.count_nonzero(table.counts) == table.counts.shape[0]
        log.info("ARI: degenerate partitions; defined as %s", 1.0 if identical else 0.0)
        return 1.0 if identical else 0.0
    return (index - expected) / (max_index - expected)


def evaluate(y_true, y_pred) -> dict:
    return {"acc": hungarian_acc(y_true, y_pred), "nmi": nmi(y_true, y_pred), "ari": ari(y_true, y_pred)}
