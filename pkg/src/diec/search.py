"""Two-stage unsupervised search for the clustering-optimal layer and timestep.

Stage 1 scores every (layer, timestep) cell on PCA-aligned, l2-normalized
features and picks the layer with the best mean of its top-rho smoothed
scores.  Stage 2 walks the timesteps at that layer on native features,
smoothing online and stopping after ``patience`` non-improving steps.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .clusterability import ScoreGrid, align_embeddings, kmeans, scott_score
from .diffusion import NoiseSchedule, extract_all_taps
from .errors import ParameterError
from .metrics import evaluate
from .numeric import moving_average_centered, substream
from .unet import TAPS, TinyUNet

log = logging.getLogger(__name__)


@dataclass
class SearchConfig:
    T_s: int = 200
    stride: int = 5
    m: int = 512
    R: int = 4
    d: int = 32
    w: int = 5
    rho: float = 0.2
    patience: int = 5
    seed: int = 0

    def validate(self, K: int | None = None):
        if self.stride < 1 or self.R < 1 or self.patience < 1 or self.d < 1 or self.T_s < 1:
            raise ParameterError("stride, R, patience, d and T_s must be >= 1")
        if self.w < 1 or self.w % 2 == 0:
            raise ParameterError("smoothing window must be odd")
        if not (0 < self.rho <= 1):
            raise ParameterError("rho must lie in (0, 1]")
        if K is not None and self.m < K + 1:
            raise ParameterError(f"subset size m={self.m} must exceed K={K}")

    def timesteps(self) -> list[int]:
        return list(range(1, self.T_s + 1, self.stride))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CotTrace:
    timesteps: list = field(default_factory=list)
    raw: list = field(default_factory=list)
    smoothed: list = field(default_factory=list)
    early_stopped: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SearchResult:
    col: str
    cot: int
    grid: ScoreGrid
    trace: CotTrace
    layer_scores: list
    forward_passes: dict
    config: dict

    @property
    def early_stopped(self) -> bool:
        return self.trace.early_stopped

    def to_dict(self) -> dict:
        return {
            "col": self.col,
            "cot": self.cot,
            "early_stopped": self.trace.early_stopped,
            "layer_scores": dict(zip(self.grid.layers, [float(v) for v in self.layer_scores])),
            "stage2": self.trace.to_dict(),
            "forward_passes": self.forward_passes,
            "config": self.config,
            "grid_meta": self.grid.meta,
        }


def sample_subset(n: int, m: int, seed: int) -> np.ndarray:
    if m > n:
        raise ParameterError(f"subset size m={m} exceeds dataset size {n}")
    if m == n:
        return np.arange(n)
    return np.sort(substream(seed, "subset").choice(n, size=m, replace=False))


def select_col_from_grid(grid: ScoreGrid, rho: float) -> tuple[str, np.ndarray]:
    """argmax over layers of the top-rho mean; ties go to the shallowest layer."""
    scores = grid.layer_scores(rho)
    best = int(np.argmax(scores))  # first maximum in tap order
    return grid.layers[best], scores


def _aligned_dim(cfg: SearchConfig, n: int, D: int) -> int:
    d = min(cfg.d, D, n - 1)
    if d != cfg.d:
        log.warning("alignment dim reduced from %d to %d (features %d-d, subset %d)", cfg.d, d, D, n)
    return d


def score_grid(model: TinyUNet, x0: np.ndarray, sched: NoiseSchedule, cfg: SearchConfig, K: int,
               layers: Sequence[str] = TAPS) -> ScoreGrid:
    ts = cfg.timesteps()
    raw = np.zeros((len(layers), len(ts)))
    dims = {}
    for j, t in enumerate(ts):
        feats = extract_all_taps(model, x0, t, sched, trials=cfg.R, seed=cfg.seed, key="stage1", taps=layers)
        for i, layer in enumerate(layers):
            E = feats[layer]
            d = _aligned_dim(cfg, E.shape[0], E.shape[1])
            dims[layer] = d
            raw[i, j] = scott_score(align_embeddings(E, d), K, substream(cfg.seed, "stage1-kmeans", layer, t))
    meta = {"kmeans": "best-of-restarts per cell", "aligned_dims": dims, "subset_size": int(x0.shape[0]),
            "trials": cfg.R}
    return ScoreGrid(list(layers), ts, raw, cfg.w, aligned=True, meta=meta)


def select_col(model: TinyUNet, images: np.ndarray, sched: NoiseSchedule, cfg: SearchConfig, K: int,
               layers: Sequence[str] = TAPS, subset: np.ndarray | None = None):
    cfg.validate(K)
    if subset is None:
        subset = sample_subset(images.shape[0], cfg.m, cfg.seed)
    grid = score_grid(model, images[subset], sched, cfg, K, layers)
    col, _ = select_col_from_grid(grid, cfg.rho)
    return col, grid


def online_argmax(score_at: Callable[[int], float], timesteps: Sequence[int], w: int, patience: int) -> tuple[int, CotTrace]:
    """Scan timesteps in order, re-smoothing the evaluated prefix after each new score.

    The smoothed trace is always ``moving_average_centered(raw_prefix, w)``, so
    windows near the right edge widen as later timesteps arrive.  Once the
    trace is long enough not to be flat, the scan stops when the prefix argmax
    is ``patience`` or more evaluations old.  With
    ``patience >= w // 2`` the argmax then sits in the settled part of the trace
    and later timesteps can only replace it by beating it outright.
    """
    if w < 1 or w % 2 == 0:
        raise ParameterError("smoothing window must be odd")
    if patience < 1:
        raise ParameterError("patience must be >= 1")
    trace = CotTrace()
    best = 0
    for t in timesteps:
        trace.timesteps.append(int(t))
        trace.raw.append(float(score_at(t)))
        trace.smoothed = moving_average_centered(trace.raw, w).tolist()
        best = int(np.argmax(trace.smoothed))
        # with <= w//2 + 1 points every window spans the whole prefix, so the smoothed trace is flat
        if len(trace.raw) >= w // 2 + 2 and len(trace.raw) - 1 - best >= patience:
            trace.early_stopped = len(trace.timesteps) < len(timesteps)
            break
    if not trace.timesteps:
        raise ParameterError("no timesteps to scan")
    return trace.timesteps[best], trace


def select_cot(model: TinyUNet, images: np.ndarray, sched: NoiseSchedule, col: str, cfg: SearchConfig, K: int,
               subset: np.ndarray | None = None):
    cfg.validate(K)
    if col not in TAPS:
        raise ParameterError(f"unknown tap id {col!r}")
    if subset is None:
        subset = sample_subset(images.shape[0], cfg.m, cfg.seed)
    x0 = images[subset]

    def score(t):
        E = extract_all_taps(model, x0, t, sched, trials=cfg.R, seed=cfg.seed, key="stage2", taps=(col,))[col]
        return scott_score(E, K, substream(cfg.seed, "stage2-kmeans", col, t))

    return online_argmax(score, cfg.timesteps(), cfg.w, cfg.patience)


def run_optimal_search(model: TinyUNet, images: np.ndarray, sched: NoiseSchedule, cfg: SearchConfig, K: int,
                       layers: Sequence[str] = TAPS) -> SearchResult:
    cfg.validate(K)
    if cfg.T_s > sched.T:
        raise ParameterError(f"T_s={cfg.T_s} exceeds schedule length {sched.T}")
    subset = sample_subset(images.shape[0], cfg.m, cfg.seed)
    n0 = model.images_seen
    col, grid = select_col(model, images, sched, cfg, K, layers, subset)
    n1 = model.images_seen
    cot, trace = select_cot(model, images, sched, col, cfg, K, subset)
    n2 = model.images_seen
    log.info("search: COL=%s COT=%d (stage 2 evaluated %d timesteps)", col, cot, len(trace.timesteps))
    return SearchResult(col, cot, grid, trace, list(grid.layer_scores(cfg.rho)),
                        {"stage1": n1 - n0, "stage2": n2 - n1, "total": n2 - n0}, cfg.to_dict())


@dataclass
class LabeledGrid:
    layers: list
    timesteps: list
    acc: np.ndarray
    nmi: np.ndarray
    ari: np.ndarray

    def best_cell(self):
        i, j = np.unravel_index(int(np.argmax(self.acc)), self.acc.shape)
        return self.layers[i], self.timesteps[j], float(self.acc[i, j])

    def cell(self, layer, t) -> float:
        return float(self.acc[self.layers.index(layer), self.timesteps.index(t)])


def exhaustive_labeled_grid(model: TinyUNet, images: np.ndarray, labels: np.ndarray, sched: NoiseSchedule,
                            timesteps: Sequence[int], K: int, trials: int, seed: int,
                            layers: Sequence[str] = TAPS) -> LabeledGrid:
    """k-means ACC/NMI/ARI of native features at every cell (uses labels; reporting only)."""
    shape = (len(layers), len(timesteps))
    acc, nmi_, ari_ = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    for j, t in enumerate(timesteps):
        feats = extract_all_taps(model, images, t, sched, trials=trials, seed=seed, key="labeled-grid", taps=layers)
        for i, layer in enumerate(layers):
            km = kmeans(feats[layer], K, substream(seed, "labeled-grid-kmeans", layer, t))
            m = evaluate(labels, km.assignments)
            acc[i, j], nmi_[i, j], ari_[i, j] = m["acc"], m["nmi"], m["ari"]
    return LabeledGrid(list(layers), list(timesteps), acc, nmi_, ari_)


def smoothed_argmax(values, w: int) -> int:
    return int(np.argmax(moving_average_centered(values, w)))
