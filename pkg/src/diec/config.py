"""Experiment configuration: nested dataclasses with a canonical JSON form and hash."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .datasets import DatasetSpec
from .engine import DiECConfig
from .errors import ParameterError
from .search import SearchConfig
from .tensor_io import canonical_json
from .unet import Architecture


@dataclass
class BackboneConfig:
    image_size: int = 16
    channels: int = 1
    widths: tuple = (32, 32, 64, 64)
    time_dim: int = 64
    groups: int = 8
    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    epochs: int = 100
    batch: int = 64
    lr: float = 1e-3

    def architecture(self) -> Architecture:
        return Architecture(self.image_size, self.channels, tuple(self.widths), self.time_dim, self.groups)


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    diec: DiECConfig = field(default_factory=DiECConfig)
    n_clusters: int = 0  # 0: use the dataset class count
    seed: int = 0
    grid_full: bool = False
    grid_trials: int = 4
    n_samples: int = 16
    out_dir: str = "runs/default"

    @property
    def K(self) -> int:
        return self.n_clusters or self.dataset.n_classes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"]["widths"] = list(self.backbone.widths)
        return d

    def hashable_dict(self) -> dict:
        d = self.to_dict()
        d.pop("out_dir")
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.hashable_dict()).encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))

    def validate(self):
        self.dataset.validate()
        self.search.validate(self.K)
        self.diec.validate()
        self.backbone.architecture()
        if self.backbone.image_size != self.dataset.image_size:
            raise ParameterError("backbone image size must match the dataset image size")
        if self.K < 2:
            raise ParameterError("need at least two clusters")


def _build(cls, data: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ParameterError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    sub = {
        "dataset": DatasetSpec,
        "backbone": BackboneConfig,
        "search": SearchConfig,
        "diec": DiECConfig,
    }
    kwargs = {}
    for key, cls in sub.items():
        if key in d:
            value = d.pop(key)
            if not isinstance(value, dict):
                raise ParameterError(f"config section {key!r} must be an object")
            if key == "backbone" and "widths" in value:
                value = {**value, "widths": tuple(value["widths"])}
            kwargs[key] = _build(cls, value)
    cfg = _build(ExperimentConfig, {**d, **kwargs})
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ParameterError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ParameterError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
