"""Tiny U-Net noise predictor with nine named activation taps."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ParameterError

TAPS = ("D1", "D2", "D3", "D4", "BOTTLENECK", "U4", "U3", "U2", "U1")


@dataclass(frozen=True)
class Architecture:
    image_size: int = 16
    channels: int = 1
    widths: tuple = (32, 32, 64, 64)
    time_dim: int = 64
    groups: int = 8

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) != 4:
            raise ParameterError("the tiny U-Net has exactly four resolution levels")
        if self.image_size % 8:
            raise ParameterError("image size must be divisible by 8")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(**d)


def tap_shapes(arch: Architecture) -> dict[str, tuple[int, int, int]]:
    """(channels, height, width) of every tap, derived from the descriptor alone."""
    w0, w1, w2, w3 = arch.widths
    s = arch.image_size
    return {
        "D1": (w0, s, s),
        "D2": (w1, s // 2, s // 2),
        "D3": (w2, s // 4, s // 4),
        "D4": (w3, s // 8, s // 8),
        "BOTTLENECK": (w3, s // 8, s // 8),
        "U4": (w3, s // 8, s // 8),
        "U3": (w2, s // 4, s // 4),
        "U2": (w1, s // 2, s // 2),
        "U1": (w0, s, s),
    }


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    return emb


class Block(nn.Module):
    """conv3x3 -> group norm -> timestep scale/shift -> SiLU."""

    def __init__(self, c_in: int, c_out: int, cond_dim: int, groups: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm = nn.GroupNorm(math.gcd(groups, c_out), c_out)
        self.film = nn.Linear(cond_dim, 2 * c_out)
        nn.init.zeros_(self.film.weight)
        nn.init.zeros_(self.film.bias)

    def forward(self, x, cond):
        h = self.norm(self.conv(x))
        scale, shift = self.film(cond).chunk(2, dim=1)
        h = h * (1 + scale[:, :, None, None]) + shift[:, :, None, None]
        return F.silu(h)


class TinyUNet(nn.Module):
    def __init__(self, arch: Architecture = Architecture()):
        super().__init__()
        self.arch = arch
        w0, w1, w2, w3 = arch.widths
        c = arch.channels
        cond = 2 * arch.time_dim
        self.time_mlp = nn.Sequential(nn.Linear(arch.time_dim, cond), nn.SiLU(), nn.Linear(cond, cond))
        g = arch.groups
        self.d1 = Block(c, w0, cond, g)
        self.down1 = nn.Conv2d(w0, w0, 3, stride=2, padding=1)
        self.d2 = Block(w0, w1, cond, g)
        self.down2 = nn.Conv2d(w1, w1, 3, stride=2, padding=1)
        self.d3 = Block(w1, w2, cond, g)
        self.down3 = nn.Conv2d(w2, w2, 3, stride=2, padding=1)
        self.d4 = Block(w2, w3, cond, g)
        self.mid = Block(w3, w3, cond, g)
        self.u4 = Block(2 * w3, w3, cond, g)
        self.u3 = Block(w3 + w2, w2, cond, g)
        self.u2 = Block(w2 + w1, w1, cond, g)
        self.u1 = Block(w1 + w0, w0, cond, g)
        self.out = nn.Conv2d(w0, c, 1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)
        # number of images pushed through forward(); used for cost accounting
        self.images_seen = 0

    def forward(self, x, t, taps=(), stop_at: str | None = None):
        """Return ``(eps_hat, {tap: activation})``.

        ``stop_at`` ends the pass at that tap (eps_hat is then None); the
        readout for a single tap does not need the decoder above it.
        """
        unknown = set(taps) - set(TAPS)
        if stop_at is not None:
            unknown |= {stop_at} - set(TAPS)
        if unknown:
            raise ParameterError(f"unknown tap id(s): {sorted(unknown)}")
        want = set(taps) | ({stop_at} if stop_at else set())
        self.images_seen += x.shape[0]
        if not torch.is_tensor(t):
            t = torch.full((x.shape[0],), int(t), dtype=torch.long)
        elif t.ndim == 0:
            t = t.expand(x.shape[0])
        cond = self.time_mlp(timestep_embedding(t, self.arch.time_dim).to(x.dtype))
        out = {}

        def keep(name, h):
            if name in want:
                out[name] = h
            return name == stop_at

        h1 = self.d1(x, cond)
        if keep("D1", h1):
            return None, out
        h2 = self.d2(self.down1(h1), cond)
        if keep("D2", h2):
            return None, out
        h3 = self.d3(self.down2(h2), cond)
        if keep("D3", h3):
            return None, out
        h4 = self.d4(self.down3(h3), cond)
        if keep("D4", h4):
            return None, out
        m = self.mid(h4, cond)
        if keep("BOTTLENECK", m):
            return None, out
        u = self.u4(torch.cat([m, h4], 1), cond)
        if keep("U4", u):
            return None, out
        u = self.u3(torch.cat([F.interpolate(u, scale_factor=2.0, mode="nearest"), h3], 1), cond)
        if keep("U3", u):
            return None, out
        u = self.u2(torch.cat([F.interpolate(u, scale_factor=2.0, mode="nearest"), h2], 1), cond)
        if keep("U2", u):
            return None, out
        u = self.u1(torch.cat([F.interpolate(u, scale_factor=2.0, mode="nearest"), h1], 1), cond)
        if keep("U1", u):
            return None, out
        return self.out(u), {k: v for k, v in out.items() if k in taps}

    def blocks(self) -> dict[str, Block]:
        return {"D1": self.d1, "D2": self.d2, "D3": self.d3, "D4": self.d4, "BOTTLENECK": self.mid,
                "U4": self.u4, "U3": self.u3, "U2": self.u2, "U1": self.u1}

    def params_below(self, tap: str) -> list[nn.Parameter]:
        """Parameters that influence the activation at ``tap``."""
        order = ["time_mlp", "d1", "down1", "d2", "down2", "d3", "down3", "d4", "mid", "u4", "u3", "u2", "u1"]
        last = {"D1": "d1", "D2": "d2", "D3": "d3", "D4": "d4", "BOTTLENECK": "mid",
                "U4": "u4", "U3": "u3", "U2": "u2", "U1": "u1"}[tap]
        names = order[: order.index(last) + 1]
        return [p for n in names for p in getattr(self, n).parameters()]


def build_model(arch: Architecture, seed: int) -> TinyUNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed) & 0xFFFFFFFFFFFF)
        model = TinyUNet(arch)
    return model
