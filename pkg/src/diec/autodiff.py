"""Gradient evaluation on top of torch autograd, and a finite-difference oracle.

``GradTape`` records a scalar loss over a fixed set of named parameters and
hands back one gradient buffer per parameter.  The finite-difference routine
works on plain float64 copies and never calls autograd, so it can serve as an
independent check of any backward pass.
"""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np
import torch

from .errors import ShapeError


class GradTape:
    """Single-use tape: ``with GradTape(params) as tape: loss = ...; tape.gradients(loss)``."""

    def __init__(self, params: Mapping[str, torch.Tensor]):
        self.params = dict(params)
        self._used = False

    def __enter__(self):
        for p in self.params.values():
            p.grad = None
        self._ctx = torch.enable_grad()
        self._ctx.__enter__()
        return self

    def __exit__(self, *exc):
        self._ctx.__exit__(*exc)
        return False

    def gradients(self, loss: torch.Tensor) -> dict[str, torch.Tensor]:
        if self._used:
            raise RuntimeError("GradTape already evaluated")
        self._used = True
        return evaluate_with_gradients(loss, self.params)


def evaluate_with_gradients(loss: torch.Tensor, params: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    if loss.numel() != 1:
        raise ShapeError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    names = list(params)
    grads = torch.autograd.grad(loss.reshape(()), [params[n] for n in names], allow_unused=True)
    return {n: (torch.zeros_like(params[n]) if g is None else g) for n, g in zip(names, grads)}


def finite_difference_gradient(fn: Callable[[dict], float], params: Mapping[str, np.ndarray],
                               h: float = 1e-3, coords: Mapping[str, np.ndarray] | None = None):
    """Central differences of ``fn`` at ``params``.

    ``coords`` optionally restricts each parameter to a subset of flat indices;
    the returned arrays then hold only those entries.
    """
    base = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    out = {}
    for name, arr in base.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size) if coords is None else np.asarray(coords[name])
        g = np.empty(idx.size)
        for n, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = fn(base)
            flat[i] = old - h
            fm = fn(base)
            flat[i] = old
            g[n] = (fp - fm) / (2 * h)
        out[name] = g if coords is not None else g.reshape(arr.shape)
    return out


def max_relative_error(analytic, numeric, floor: float = 1e-8, scale_floor: float = 1e-3) -> float:
    """Elementwise relative error, denominators floored at ``scale_floor * max|numeric|``.

    The floor keeps entries that are zero up to rounding (dead ReLUs, tiny
    couplings) from dominating the maximum.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), max(floor, scale_floor * np.abs(b).max()))
    return float(np.max(np.abs(a - b) / denom))
