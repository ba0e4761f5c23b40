"""DiEC joint training: residual head, DEC self-training, adaptive graph, denoising branch."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .clusterability import kmeans
from .diffusion import (FEATURE_CHUNK, NoiseSchedule, denoising_loss, fixed_denoising_loss, forward_noising, pool,
                        trial_noise)
from .errors import DegenerateClusterError, ParameterError, ShapeError
from .metrics import evaluate
from .numeric import gaussian, substream
from .unet import TAPS, TinyUNet

log = logging.getLogger(__name__)

Q_FLOOR = 1e-12


@dataclass
class DiECConfig:
    alpha_kl: float = 0.1
    beta_gr: float = 0.01
    gamma_en: float = 0.001
    trials: int = 8
    target_interval: int = 5
    max_epochs: int = 100
    knn: int = 10
    batch: int = 64
    lr_backbone: float = 3e-3
    lr_head: float = 1e-3
    lr_centroids: float = 1e-3
    student_alpha: float = 1.0
    freeze_backbone: bool = False
    use_lre: bool = True
    tol: float = 0.001
    warmup_epochs: int = 5
    lre_timesteps: str = "sample"  # "sample": one t_r per image; "batch": one shared by the batch
    pooling: str = "avg"
    seed: int = 0

    def validate(self):
        if min(self.alpha_kl, self.beta_gr, self.gamma_en) < 0:
            raise ParameterError("loss weights must be non-negative")
        if self.lre_timesteps not in ("batch", "sample"):
            raise ParameterError(f"lre_timesteps must be 'batch' or 'sample', got {self.lre_timesteps!r}")
        if self.warmup_epochs < 0:
            raise ParameterError("warmup_epochs must be >= 0")
        if self.trials < 1 or self.target_interval < 1 or self.max_epochs < 0 or self.knn < 1:
            raise ParameterError("trials, target_interval, knn must be >= 1 and max_epochs >= 0")
        if self.student_alpha <= 0:
            raise ParameterError("Student-t degree must be positive")
        if self.beta_gr > 0 and self.gamma_en <= 0:
            raise ParameterError("gamma_en must be positive when the graph term is active")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- residual head


class ResidualHead(nn.Module):
    """z = e + W2 relu(W1 e + b1) + b2; the output layer starts at zero so z = e initially."""

    def __init__(self, dim: int, seed: int = 0):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(int(seed) & 0xFFFFFFFFFFFF)
            self.fc1 = nn.Linear(dim, dim)
            self.fc2 = nn.Linear(dim, dim)
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)
        self.dim = dim

    def forward(self, e):
        return e + self.fc2(F.relu(self.fc1(e)))


def residual_embed(e: torch.Tensor, head: ResidualHead) -> torch.Tensor:
    if e.ndim != 2 or e.shape[1] != head.dim:
        raise ShapeError(f"embedding width {tuple(e.shape)} does not match head dim {head.dim}")
    return head(e)


# ------------------------------------------------------------------ DEC pieces


def soft_assign(Z: torch.Tensor, mu: torch.Tensor, alpha: float = 1.0) -> torch.Tensor:
    """Student-t kernel assignments, normalized per row (computed in log space)."""
    if mu.ndim != 2 or mu.shape[0] < 1:
        raise ParameterError("need at least one centroid")
    if alpha <= 0:
        raise ParameterError("Student-t degree must be positive")
    d2 = ((Z[:, None, :] - mu[None, :, :]) ** 2).sum(-1)
    logits = -(alpha + 1.0) / 2.0 * torch.log1p(d2 / alpha)
    return torch.softmax(logits, dim=1)


def target_distribution(Q):
    """p_ik proportional to q_ik^2 / f_k with f_k the column mass of Q."""
    is_np = not torch.is_tensor(Q)
    Qt = torch.as_tensor(Q, dtype=torch.float64) if is_np else Q
    f = Qt.sum(0)
    empty = torch.nonzero(f <= 0).flatten().tolist()
    if empty:
        raise DegenerateClusterError(f"clusters {empty} have zero assignment mass", empty)
    w = Qt ** 2 / f
    P = w / w.sum(1, keepdim=True)
    return P.numpy() if is_np else P


def kl_loss(P, Q, reduction: str = "sum"):
    """sum_ik p_ik log(p_ik / q_ik), with q clipped below at 1e-12 and 0 log 0 = 0."""
    is_np = not torch.is_tensor(Q)
    Pt = torch.as_tensor(P, dtype=torch.float64) if is_np else P
    Qt = torch.as_tensor(Q, dtype=torch.float64) if is_np else Q
    if Pt.shape != Qt.shape:
        raise ShapeError(f"P {tuple(Pt.shape)} and Q {tuple(Qt.shape)} differ")
    terms = torch.where(Pt > 0, Pt * (torch.log(Pt.clamp_min(Q_FLOOR)) - torch.log(Qt.clamp_min(Q_FLOOR))),
                        torch.zeros_like(Pt))
    total = terms.sum()
    if reduction == "mean":
        total = total / max(1, Pt.shape[0])
    return float(total) if is_np else total


# --------------------------------------------------------------- affinity graph


@dataclass
class AffinityGraph:
    neighbors: np.ndarray  # N x k indices
    weights: np.ndarray  # N x k, rows sum to one
    sigma: np.ndarray  # per-row bandwidth

    def dense(self) -> np.ndarray:
        N = self.neighbors.shape[0]
        S = np.zeros((N, N))
        np.put_along_axis(S, self.neighbors, self.weights, axis=1)
        return S

    def copy(self) -> "AffinityGraph":
        return AffinityGraph(self.neighbors.copy(), self.weights.copy(), self.sigma.copy())


def build_affinity(X, k: int) -> AffinityGraph:
    """Exact k-NN on flattened inputs with Gaussian weights and local bandwidths."""
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    N = X.shape[0]
    if not (1 <= k < N):
        raise ParameterError(f"need 1 <= k < N, got k={k}, N={N}")
    sq = (X * X).sum(1)
    D = np.maximum(sq[:, None] - 2.0 * X @ X.T + sq[None, :], 0.0)
    np.fill_diagonal(D, np.inf)
    nb = np.argsort(D, axis=1, kind="stable")[:, :k]
    dist = np.take_along_axis(D, nb, axis=1)
    sigma = dist.mean(1)
    safe = np.where(sigma > 0, sigma, 1.0)
    w = np.exp(-dist / safe[:, None])
    w /= w.sum(1, keepdims=True)
    return AffinityGraph(nb, w, sigma)


def _pair_dists(Q: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    return ((Q[:, None, :] - Q[neighbors]) ** 2).sum(-1)


def graph_losses(Q, S: AffinityGraph):
    """(L_Gr, L_En) summed over rows and neighbors; 0 log 0 treated as 0."""
    Q = np.asarray(Q, dtype=np.float64)
    dij = _pair_dists(Q, S.neighbors)
    l_gr = float((S.weights * dij).sum())
    w = S.weights
    l_en = float(np.where(w > 0, w * np.log(np.where(w > 0, w, 1.0)), 0.0).sum())
    return l_gr, l_en


def graph_objective(Q, S: AffinityGraph, beta: float, gamma: float) -> float:
    l_gr, l_en = graph_losses(Q, S)
    return beta * l_gr + gamma * l_en


def update_affinity(S: AffinityGraph, Q, beta: float, gamma: float) -> AffinityGraph:
    """Row-wise simplex minimizer of beta * sum s d + gamma * sum s log s: a softmax of -beta d / gamma."""
    if gamma <= 0:
        raise ParameterError("gamma_en must be positive for the closed-form affinity update")
    if beta < 0:
        raise ParameterError("beta_gr must be non-negative")
    dij = _pair_dists(np.asarray(Q, dtype=np.float64), S.neighbors)
    logits = -beta * dij / gamma
    logits -= logits.max(1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(1, keepdims=True)
    return AffinityGraph(S.neighbors.copy(), w, S.sigma.copy())


# ----------------------------------------------------------- denoising branch


def denoise_loss_random_t(model: TinyUNet, batch: torch.Tensor, sched: NoiseSchedule,
                          rng: np.random.Generator, per_sample: bool = False) -> torch.Tensor:
    """Noise-prediction MSE at a timestep drawn uniformly from 1..T (shared by the batch unless ``per_sample``)."""
    n = batch.shape[0]
    t = rng.integers(1, sched.T + 1, size=n) if per_sample else np.full(n, int(rng.integers(1, sched.T + 1)))
    eps = gaussian(rng, tuple(batch.shape))
    return denoising_loss(model, batch, t, eps, sched)


# ------------------------------------------------------------------- embedding


def tap_embedding(model: TinyUNet, x0: torch.Tensor, layer: str, t: int, eps: np.ndarray, sched: NoiseSchedule,
                  pooling: str = "avg") -> torch.Tensor:
    x_t = forward_noising(x0, t, torch.from_numpy(np.asarray(eps, dtype=np.float32)), sched)
    _, acts = model(x_t, t, taps=(layer,), stop_at=layer)
    return pool(acts[layer], pooling)


def averaged_embedding(model: TinyUNet, head: ResidualHead, images: np.ndarray, layer: str, t: int,
                       sched: NoiseSchedule, trials: int, seed: int, key="init", pooling: str = "avg",
                       return_std: bool = False):
    """Mean of ``trials`` residual embeddings, each under an independent noise draw."""
    if trials < 1:
        raise ParameterError("need at least one noise trial")
    images = np.asarray(images, dtype=np.float32)
    acc = None
    sq = None
    with torch.no_grad():
        for m in range(trials):
            eps = trial_noise(seed, key, t, m, images.shape)
            parts = []
            for s in range(0, images.shape[0], FEATURE_CHUNK):
                e = tap_embedding(model, torch.from_numpy(images[s:s + FEATURE_CHUNK]), layer, t,
                                  eps[s:s + FEATURE_CHUNK], sched, pooling)
                parts.append(head(e).double())
            z = torch.cat(parts).numpy()
            acc = z if acc is None else acc + z
            if return_std:
                sq = z * z if sq is None else sq + z * z
    mean = acc / trials
    if return_std:
        var = np.maximum(sq / trials - mean * mean, 0.0)
        return mean, np.sqrt(var)
    return mean


def init_centroids(model: TinyUNet, head: ResidualHead, images: np.ndarray, layer: str, t: int, sched: NoiseSchedule,
                   trials: int, K: int, seed: int, pooling: str = "avg"):
    """k-means centroids on M-trial averaged embeddings; returns (centroids, zbar)."""
    zbar = averaged_embedding(model, head, images, layer, t, sched, trials, seed, "init", pooling)
    km = kmeans(zbar, K, substream(seed, "init-kmeans"))
    return km.centroids, zbar


# --------------------------------------------------------------------- training


@dataclass
class ClusterState:
    centroids: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    labels: np.ndarray
    alpha: float = 1.0

    def metadata(self) -> dict:
        return {"K": int(self.centroids.shape[0]), "dim": int(self.centroids.shape[1]), "alpha": self.alpha,
                "n": int(self.labels.shape[0]), "cluster_sizes": np.bincount(self.labels,
                                                                               minlength=self.centroids.shape[0]).tolist()}


LOG_FIELDS = ["epoch", "L_Re", "L_KL", "L_Gr", "L_En", "ACC", "NMI", "ARI", "label_change", "denoise_eval", "event"]


def _q_full(zbar, mu, alpha):
    with torch.no_grad():
        return soft_assign(torch.as_tensor(zbar, dtype=torch.float64), mu.detach().double(), alpha).numpy()


def train(model: TinyUNet, head: ResidualHead, images: np.ndarray, layer: str, t_star: int, sched: NoiseSchedule,
          cfg: DiECConfig, K: int, labels: np.ndarray | None = None, centroids: np.ndarray | None = None,
          on_epoch=None):
    """Alternate target refreshes and joint gradient steps; returns (ClusterState, log rows)."""
    cfg.validate()
    if layer not in TAPS:
        raise ParameterError(f"unknown tap id {layer!r}")
    if K < 2:
        raise ParameterError("need K >= 2 clusters")
    images = np.asarray(images, dtype=np.float32)
    N = images.shape[0]
    data = torch.from_numpy(images)
    seed = cfg.seed

    if centroids is None:
        centroids, _ = init_centroids(model, head, images, layer, t_star, sched, cfg.trials, K, seed, cfg.pooling)
    mu = nn.Parameter(torch.as_tensor(centroids, dtype=torch.float32).clone())
    graph = build_affinity(images, min(cfg.knn, N - 1))

    groups = [{"params": list(head.parameters()), "lr": cfg.lr_head},
              {"params": [mu], "lr": cfg.lr_centroids}]
    if not cfg.freeze_backbone:
        groups.append({"params": list(model.parameters()), "lr": cfg.lr_backbone})
    else:
        for p in model.parameters():
            p.requires_grad_(False)
    opt = torch.optim.Adam(groups, betas=(0.9, 0.999))
    # a fresh Adam state takes lr-sized steps on every coordinate; ramp up to spare the pretrained weights
    warmup_steps = cfg.warmup_epochs * ((N + cfg.batch - 1) // cfg.batch)
    sched_lr = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda step: min(1.0, (step + 1) / warmup_steps) if warmup_steps > 0 else 1.0)

    def refresh():
        zbar = averaged_embedding(model, head, images, layer, t_star, sched, cfg.trials, seed, "target", cfg.pooling)
        return _q_full(zbar, mu, cfg.student_alpha), zbar

    def metrics_for(lbl):
        if labels is None:
            return {"acc": float("nan"), "nmi": float("nan"), "ari": float("nan")}
        return evaluate(labels, lbl)

    Q, zbar = refresh()
    P = target_distribution(Q)
    hard = Q.argmax(1)
    empty_streak = np.zeros(K, dtype=int)
    rows = []
    m0 = metrics_for(hard)
    rows.append({"epoch": 0, "L_Re": float("nan"), "L_KL": kl_loss(P, Q, "mean"), "L_Gr": float("nan"),
                 "L_En": float("nan"), "ACC": m0["acc"], "NMI": m0["nmi"], "ARI": m0["ari"], "label_change": 0.0,
                 "denoise_eval": fixed_denoising_loss(model, images, sched, seed), "event": ""})
    if on_epoch:
        on_epoch(rows[-1])

    for epoch in range(1, cfg.max_epochs + 1):
        event = ""
        if epoch % cfg.target_interval == 0:
            Q, zbar = refresh()
            new_hard = Q.argmax(1)
            change = float(np.mean(new_hard != hard))
            hard = new_hard
            sizes = np.bincount(hard, minlength=K)
            empty_streak = np.where(sizes == 0, empty_streak + 1, 0)
            dead = np.flatnonzero(empty_streak >= 3)
            if dead.size:
                with torch.no_grad():
                    for k in dead:
                        far = np.argmax(((zbar - mu.detach().double().numpy()[hard]) ** 2).sum(1))
                        mu[k] = torch.as_tensor(zbar[far], dtype=torch.float32)
                        empty_streak[k] = 0
                event = f"reinit clusters {dead.tolist()}"
                log.warning("epoch %d: %s", epoch, event)
                Q = _q_full(zbar, mu, cfg.student_alpha)
            try:
                P = target_distribution(Q)
            except DegenerateClusterError:
                P = target_distribution(np.clip(Q, Q_FLOOR, None) / np.clip(Q, Q_FLOOR, None).sum(1, keepdims=True))
            stop = change < cfg.tol
        else:
            change = float("nan")
            stop = False

        rng = substream(seed, "train", epoch)
        order = rng.permutation(N)
        P_t = torch.as_tensor(P, dtype=torch.float32)
        W_t = torch.as_tensor(graph.weights, dtype=torch.float32)
        cache = np.full((N, K), np.nan)
        sums = {"L_Re": 0.0, "L_KL": 0.0, "L_Gr": 0.0, "L_En": 0.0}
        for start in range(0, N, cfg.batch):
            idx = order[start:start + cfg.batch]
            B = idx.size
            xb = data[idx]
            # Branch A: clustering at the fixed (layer, t*)
            eps = gaussian(rng, tuple(xb.shape))
            z = residual_embed(tap_embedding(model, xb, layer, t_star, eps, sched, cfg.pooling), head)
            q = soft_assign(z, mu, cfg.student_alpha)
            l_kl = kl_loss(P_t[idx], q, "mean")
            # neighbours: live rows from this batch, cached rows from earlier batches
            pos = {int(i): r for r, i in enumerate(idx)}
            nb = graph.neighbors[idx]
            w = W_t[idx]
            q_nb = torch.zeros((B, nb.shape[1], K))
            mask = torch.zeros((B, nb.shape[1]))
            for r in range(B):
                for c, j in enumerate(nb[r]):
                    j = int(j)
                    if j in pos:
                        q_nb[r, c] = q[pos[j]]
                        mask[r, c] = 1.0
                    elif not np.isnan(cache[j, 0]):
                        q_nb[r, c] = torch.as_tensor(cache[j], dtype=torch.float32)
                        mask[r, c] = 1.0
            l_gr = (mask * w * ((q[:, None, :] - q_nb) ** 2).sum(-1)).sum() / B
            wd = graph.weights[idx]
            l_en = float(np.where(wd > 0, wd * np.log(np.where(wd > 0, wd, 1.0)), 0.0).sum()) / B
            # Branch B: denoising at a random timestep
            if cfg.use_lre and not cfg.freeze_backbone:
                l_re = denoise_loss_random_t(model, xb, sched, rng, cfg.lre_timesteps == "sample")
            else:
                with torch.no_grad():
                    l_re = denoise_loss_random_t(model, xb, sched, rng, cfg.lre_timesteps == "sample")
            total = cfg.alpha_kl * l_kl + cfg.beta_gr * l_gr + cfg.gamma_en * l_en
            if cfg.use_lre and not cfg.freeze_backbone:
                total = total + l_re
            opt.zero_grad(set_to_none=True)
            if total.requires_grad:
                total.backward()
                opt.step()
            sched_lr.step()
            cache[idx] = q.detach().double().numpy()
            sums["L_Re"] += float(l_re.detach()) * B
            sums["L_KL"] += float(l_kl.detach()) * B
            sums["L_Gr"] += float(l_gr.detach()) * B
            sums["L_En"] += l_en * B

        if cfg.beta_gr > 0 and cfg.gamma_en > 0:
            before = graph_objective(cache, graph, cfg.beta_gr, cfg.gamma_en)
            graph = update_affinity(graph, cache, cfg.beta_gr, cfg.gamma_en)
            after = graph_objective(cache, graph, cfg.beta_gr, cfg.gamma_en)
            assert after <= before + 1e-9 * max(1.0, abs(before)), "affinity update increased the graph objective"

        epoch_labels = cache.argmax(1)
        m = metrics_for(epoch_labels)
        row = {"epoch": epoch, **{k: v / N for k, v in sums.items()}, "ACC": m["acc"], "NMI": m["nmi"],
               "ARI": m["ari"], "label_change": change,
               "denoise_eval": fixed_denoising_loss(model, images, sched, seed), "event": event}
        rows.append(row)
        if on_epoch:
            on_epoch(row)
        if stop:
            log.info("epoch %d: label change %.4f below tol, stopping", epoch, change)
            break

    Q, zbar = refresh()
    hard = Q.argmax(1)
    try:
        P = target_distribution(Q)
    except DegenerateClusterError:
        pass
    final = metrics_for(hard)
    rows.append({"epoch": rows[-1]["epoch"], "L_Re": float("nan"), "L_KL": kl_loss(P, Q, "mean"),
                 "L_Gr": float("nan"), "L_En": float("nan"), "ACC": final["acc"], "NMI": final["nmi"],
                 "ARI": final["ari"], "label_change": float("nan"), "denoise_eval": rows[-1]["denoise_eval"],
                 "event": "final"})
    if cfg.freeze_backbone:
        for p in model.parameters():
            p.requires_grad_(True)
    state = ClusterState(mu.detach().double().numpy(), Q, P, hard, cfg.student_alpha)
    return state, rows
