"""DDPM schedule, forward noising, pretraining, ancestral sampling and tap readout."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ParameterError, ShapeError
from .numeric import gaussian, substream
from .unet import TAPS, TinyUNet

FEATURE_CHUNK = 256


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta_start: float
    beta_end: float
    beta: np.ndarray = field(repr=False, compare=False)
    alpha: np.ndarray = field(repr=False, compare=False)
    alpha_bar: np.ndarray = field(repr=False, compare=False)

    def posterior_variance(self, t: int) -> float:
        """beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t."""
        return float((1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]) * self.beta[t])

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}


def build_schedule(T: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule; arrays are indexed 0..T with alpha_bar[0] = 1."""
    if T < 1 or not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(f"invalid schedule T={T}, beta=[{beta_start}, {beta_end}]")
    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(beta_start, beta_end, T) if T > 1 else beta_start
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(int(T), float(beta_start), float(beta_end), beta, alpha, alpha_bar)


def _check_t(t, sched: NoiseSchedule):
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > sched.T):
        raise ParameterError(f"timestep {t} outside [1, {sched.T}]")


def forward_noising(x0, t, eps, sched: NoiseSchedule):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; ``t`` may be a scalar or one per sample."""
    if tuple(x0.shape) != tuple(eps.shape):
        raise ShapeError(f"x0 {tuple(x0.shape)} and eps {tuple(eps.shape)} differ")
    _check_t(t, sched)
    ab = sched.alpha_bar[np.asarray(t)]
    a = np.sqrt(ab)
    b = np.sqrt(1.0 - ab)
    if np.ndim(t):
        shape = (-1,) + (1,) * (x0.ndim - 1)
        a, b = a.reshape(shape), b.reshape(shape)
    if torch.is_tensor(x0):
        a = torch.as_tensor(a, dtype=x0.dtype)
        b = torch.as_tensor(b, dtype=x0.dtype)
        return a * x0 + b * eps
    return (a * x0 + b * eps).astype(np.asarray(x0).dtype)


def denoise_predict(model: TinyUNet, x_t, t, taps=()):
    """eps_hat and requested tap activations, without gradient tracking."""
    with torch.no_grad():
        x = torch.as_tensor(np.asarray(x_t, dtype=np.float32)) if not torch.is_tensor(x_t) else x_t
        eps_hat, acts = model(x, t, taps=tuple(taps))
    return eps_hat, acts


# ------------------------------------------------------------------ pretraining


def denoising_loss(model: TinyUNet, x0: torch.Tensor, t: np.ndarray, eps: np.ndarray,
                   sched: NoiseSchedule) -> torch.Tensor:
    eps_t = torch.from_numpy(eps)
    x_t = forward_noising(x0, t, eps_t, sched)
    eps_hat, _ = model(x_t, torch.from_numpy(np.asarray(t, dtype=np.int64)))
    return F.mse_loss(eps_hat, eps_t)


def make_adam(params, lr: float):
    return torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999))


def pretrain(model: TinyUNet, images: np.ndarray, sched: NoiseSchedule, *, epochs: int, batch: int = 64,
             lr: float = 2e-4, seed: int = 0, log=None) -> list[dict]:
    """Standard epsilon-prediction training; returns one record per epoch."""
    images = np.asarray(images, dtype=np.float32)
    if images.shape[0] == 0:
        raise ParameterError("cannot pretrain on an empty dataset")
    opt = make_adam(model.parameters(), lr)
    data = torch.from_numpy(images)
    n = images.shape[0]
    history = []
    model.train()
    for epoch in range(1, epochs + 1):
        rng = substream(seed, "pretrain", epoch)
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            t = rng.integers(1, sched.T + 1, size=idx.size)
            eps = gaussian(rng, (idx.size,) + images.shape[1:])
            loss = denoising_loss(model, data[idx], t, eps, sched)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += float(loss.detach()) * idx.size
            count += idx.size
        rec = {"epoch": epoch, "loss": total / count}
        history.append(rec)
        if log is not None:
            log(rec)
    model.eval()
    return history


def fixed_denoising_loss(model: TinyUNet, images: np.ndarray, sched: NoiseSchedule, seed: int,
                         n_draws: int = 1) -> float:
    """Random-timestep denoising MSE with noise and timesteps frozen by ``seed``.

    Used to track generative stability across fine-tuning epochs: the same
    (t, eps) draws are reused every time, so changes reflect the model only.
    """
    images = np.asarray(images, dtype=np.float32)
    rng = substream(seed, "fixed-denoise")
    total, count = 0.0, 0
    with torch.no_grad():
        for _ in range(n_draws):
            t = rng.integers(1, sched.T + 1, size=images.shape[0])
            eps = gaussian(rng, images.shape)
            for s in range(0, images.shape[0], FEATURE_CHUNK):
                sl = slice(s, s + FEATURE_CHUNK)
                loss = denoising_loss(model, torch.from_numpy(images[sl]), t[sl], eps[sl], sched)
                total += float(loss) * (t[sl].size)
                count += t[sl].size
    return total / count


# --------------------------------------------------------------------- sampling


def reverse_mean(sched: NoiseSchedule, x_t: torch.Tensor, t: int, eps_hat: torch.Tensor) -> torch.Tensor:
    beta = sched.beta[t]
    coef = beta / np.sqrt(1.0 - sched.alpha_bar[t])
    return (x_t - float(coef) * eps_hat) / float(np.sqrt(sched.alpha[t]))


def sample(model: TinyUNet, sched: NoiseSchedule, n: int, seed: int) -> np.ndarray:
    """Ancestral sampling from x_T ~ N(0, I); clamped to [-1, 1] only at the end."""
    arch = model.arch
    shape = (n, arch.channels, arch.image_size, arch.image_size)
    rng = substream(seed, "sample")
    x = torch.from_numpy(gaussian(rng, shape))
    with torch.no_grad():
        for t in range(sched.T, 0, -1):
            eps_hat, _ = model(x, t)
            x = reverse_mean(sched, x, t, eps_hat)
            var = sched.posterior_variance(t)
            if var > 0:
                x = x + float(np.sqrt(var)) * torch.from_numpy(gaussian(rng, shape))
    return x.clamp(-1.0, 1.0).numpy()


# ----------------------------------------------------------- feature extraction


@dataclass
class FeatureBatch:
    embeddings: np.ndarray
    layer: str
    t: int
    trials: int
    pooling: str = "avg"


def pool(act: torch.Tensor, mode: str) -> torch.Tensor:
    if mode == "avg":
        return act.mean(dim=(2, 3))
    if mode == "flatten":
        return act.reshape(act.shape[0], -1)
    raise ParameterError(f"unknown pooling mode {mode!r}")


def trial_noise(seed: int, key, t: int, r: int, shape) -> np.ndarray:
    return gaussian(substream(seed, key, int(t), int(r)), shape)


def extract_all_taps(model: TinyUNet, x0: np.ndarray, t: int, sched: NoiseSchedule, *, trials: int,
                     seed: int, key="features", taps=TAPS, pooling: str = "avg", noise=None) -> dict[str, np.ndarray]:
    """Pooled tap activations averaged over ``trials`` noise draws at timestep t.

    One forward pass per (sample, trial) serves every requested tap.  ``noise``
    may supply the draws explicitly as an array of shape (trials, *x0.shape).
    """
    if trials < 1:
        raise ParameterError("need at least one noise trial")
    _check_t(t, sched)
    x0 = np.asarray(x0, dtype=np.float32)
    taps = tuple(taps)
    deepest = max(taps, key=TAPS.index) if len(taps) < len(TAPS) else None
    sums = {}
    with torch.no_grad():
        for r in range(trials):
            eps = noise[r] if noise is not None else trial_noise(seed, key, t, r, x0.shape)
            x_t = forward_noising(x0, t, np.asarray(eps, dtype=np.float32), sched)
            for s in range(0, x0.shape[0], FEATURE_CHUNK):
                xb = torch.from_numpy(np.ascontiguousarray(x_t[s:s + FEATURE_CHUNK]))
                _, acts = model(xb, t, taps=taps, stop_at=deepest)
                for name in taps:
                    f = pool(acts[name], pooling).double().numpy()
                    sums.setdefault(name, []).append((r, s, f))
    out = {}
    for name in taps:
        chunks = {}
        for r, s, f in sums[name]:
            chunks[s] = chunks[s] + f if s in chunks else f.copy()
        out[name] = np.concatenate([chunks[s] for s in sorted(chunks)], axis=0) / trials
    return out


def extract_features(model: TinyUNet, x0: np.ndarray, layer: str, t: int, sched: NoiseSchedule, *,
                     trials: int, seed: int, key="features", pooling: str = "avg", noise=None) -> FeatureBatch:
    if layer not in TAPS:
        raise ParameterError(f"unknown tap id {layer!r}")
    feats = extract_all_taps(model, x0, t, sched, trials=trials, seed=seed, key=key, taps=(layer,),
                             pooling=pooling, noise=noise)
    return FeatureBatch(feats[layer], layer, int(t), int(trials), pooling)
