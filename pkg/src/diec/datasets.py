"""Synthetic image datasets and the IDX reader."""
from __future__ import annotations

import gzip
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError
from .numeric import substream

KINDS = ("synthetic-shapes", "synthetic-gaussian-digits", "idx-pair")
SHAPES = ("hbar", "vbar", "ring", "blob", "diag", "cross", "square", "dots")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic-shapes"
    image_size: int = 16
    n_classes: int = 4
    samples_per_class: int = 128
    seed: int = 0
    noise: float = 0.5
    jitter: int = 1
    contrast: float = 0.32
    normalization: str = "minus-one-one"
    images_path: str = ""
    labels_path: str = ""

    def validate(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "idx-pair":
            if not (self.images_path and self.labels_path):
                raise ParameterError("idx-pair datasets need images_path and labels_path")
            return
        if self.image_size < 8 or self.image_size % 8:
            raise ParameterError("image size must be a positive multiple of 8")
        if self.kind == "synthetic-shapes" and not (1 <= self.n_classes <= len(SHAPES)):
            raise ParameterError(f"synthetic-shapes supports 1..{len(SHAPES)} classes")
        if self.n_classes < 1 or self.samples_per_class < 0:
            raise ParameterError("class count must be >= 1 and samples per class >= 0")
        if self.noise < 0 or self.jitter < 0 or not (0 < self.contrast <= 1):
            raise ParameterError("noise and jitter must be >= 0, contrast in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(**d)

    @classmethod
    def from_json(cls, s: str) -> "DatasetSpec":
        return cls.from_dict(json.loads(s))


def _shape_mask(name: str, size: int) -> np.ndarray:
    """Binary template centred in a size x size canvas."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    dy, dx = yy - c, xx - c
    r = np.hypot(dy, dx)
    s = size / 16.0
    if name == "hbar":
        m = (np.abs(dy) <= 1.0 * s) & (np.abs(dx) <= 5.0 * s)
    elif name == "vbar":
        m = (np.abs(dx) <= 1.0 * s) & (np.abs(dy) <= 5.0 * s)
    elif name == "ring":
        m = (r >= 3.0 * s) & (r <= 4.6 * s)
    elif name == "blob":
        m = r <= 3.2 * s
    elif name == "diag":
        m = (np.abs(dy - dx) <= 1.2 * s) & (np.abs(dx) <= 4.5 * s)
    elif name == "cross":
        m = ((np.abs(dx) <= 0.8 * s) | (np.abs(dy) <= 0.8 * s)) & (np.abs(dx) <= 4.5 * s) & (np.abs(dy) <= 4.5 * s)
    elif name == "square":
        a = np.maximum(np.abs(dx), np.abs(dy))
        m = (a >= 3.2 * s) & (a <= 4.5 * s)
    elif name == "dots":
        m = (np.hypot(dy, dx - 3 * s) <= 1.8 * s) | (np.hypot(dy, dx + 3 * s) <= 1.8 * s)
    else:
        raise ParameterError(f"unknown shape {name!r}")
    return m.astype(np.float32)


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    H, W = img.shape
    ys, yd = (slice(0, H - dy), slice(dy, H)) if dy >= 0 else (slice(-dy, H), slice(0, H + dy))
    xs, xd = (slice(0, W - dx), slice(dx, W)) if dx >= 0 else (slice(-dx, W), slice(0, W + dx))
    out[yd, xd] = img[ys, xs]
    return out


def _templates(spec: DatasetSpec) -> list[np.ndarray]:
    if spec.kind == "synthetic-shapes":
        return [_shape_mask(SHAPES[k], spec.image_size) for k in range(spec.n_classes)]
    # gaussian digits: smooth random blobs per class
    rng = substream(spec.seed, "templates")
    size = spec.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = []
    for _ in range(spec.n_classes):
        img = np.zeros((size, size))
        for _ in range(4):
            cy, cx = rng.uniform(0.25 * size, 0.75 * size, size=2)
            sig = rng.uniform(0.08, 0.16) * size
            img += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig * sig))
        out.append((img / img.max()).astype(np.float32))
    return out


def generate_synthetic(spec: DatasetSpec):
    """Images of shape (N, 1, S, S) in [-1, 1] and integer labels, class-major order.

    Each sample is a class template on a -1 background, moved by an integer
    offset in [-jitter, jitter]^2 and corrupted by Gaussian pixel noise of
    standard deviation ``noise``.  ``contrast`` scales the foreground level.
    """
    spec.validate()
    if spec.kind == "idx-pair":
        raise ParameterError("use load_idx for idx-pair datasets")
    rng = substream(spec.seed, "synthetic", spec.kind)
    S, K, n = spec.image_size, spec.n_classes, spec.samples_per_class
    templates = _templates(spec)
    images = np.empty((K * n, 1, S, S), dtype=np.float32)
    labels = np.repeat(np.arange(K, dtype=np.int64), n)
    i = 0
    for k in range(K):
        for _ in range(n):
            dy, dx = rng.integers(-spec.jitter, spec.jitter + 1, size=2)
            img = -1.0 + 2.0 * spec.contrast * _shift(templates[k], int(dy), int(dx))
            if spec.noise > 0:
                img = img + spec.noise * rng.standard_normal((S, S))
            images[i, 0] = np.clip(img, -1.0, 1.0)
            i += 1
    return images, labels


# -------------------------------------------------------------------------- IDX


def _open(path):
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing file {path}")
    data = path.read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def load_idx(images_path, labels_path, image_size: int | None = None):
    """Read an MNIST-style IDX image/label pair; pixels mapped from [0, 255] to [-1, 1].

    When ``image_size`` exceeds the stored size the images are centre-padded
    with -1 (background); smaller targets raise.
    """
    img = _open(images_path)
    lab = _open(labels_path)
    if len(img) < 16 or struct.unpack(">I", img[:4])[0] != 0x00000803:
        raise FormatError("bad IDX image magic")
    if len(lab) < 8 or struct.unpack(">I", lab[:4])[0] != 0x00000801:
        raise FormatError("bad IDX label magic")
    n, rows, cols = struct.unpack(">III", img[4:16])
    (n_lab,) = struct.unpack(">I", lab[4:8])
    if n != n_lab:
        raise FormatError(f"image count {n} != label count {n_lab}")
    if len(img) != 16 + n * rows * cols:
        raise FormatError("IDX image payload truncated or oversized")
    if len(lab) != 8 + n:
        raise FormatError("IDX label payload truncated or oversized")
    pixels = np.frombuffer(img, dtype=np.uint8, offset=16).reshape(n, 1, rows, cols)
    images = pixels.astype(np.float32) / 127.5 - 1.0
    labels = np.frombuffer(lab, dtype=np.uint8, offset=8).astype(np.int64)
    if image_size is not None and (rows, cols) != (image_size, image_size):
        if rows > image_size or cols > image_size:
            raise FormatError(f"IDX images {rows}x{cols} larger than model input {image_size}")
        out = -np.ones((n, 1, image_size, image_size), dtype=np.float32)
        top, left = (image_size - rows) // 2, (image_size - cols) // 2
        out[:, :, top:top + rows, left:left + cols] = images
        images = out
    return images, labels


def write_idx(images_path, labels_path, pixels: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 pixels (N, rows, cols) and labels as an uncompressed IDX pair."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    Path(images_path).write_bytes(struct.pack(">IIII", 0x803, n, rows, cols) + pixels.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", 0x801, n) + np.asarray(labels, dtype=np.uint8).tobytes())


def load_dataset(spec: DatasetSpec, image_size: int | None = None):
    spec.validate()
    if spec.kind == "idx-pair":
        return load_idx(spec.images_path, spec.labels_path, image_size or spec.image_size)
    return generate_synthetic(spec)
