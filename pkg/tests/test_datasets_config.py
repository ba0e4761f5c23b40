import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.cluster.vq import kmeans2

from diec.config import ExperimentConfig, config_from_dict, load_config, save_config
from diec.datasets import DatasetSpec, generate_synthetic, load_dataset, load_idx, write_idx
from diec.errors import FormatError, ParameterError
from diec.metrics import hungarian_acc


def test_default_dataset_pixel_kmeans_band():
    # oracle: scipy k-means, lowest inertia over many k-means++ seedings
    images, labels = generate_synthetic(DatasetSpec())
    F = images.reshape(len(images), -1).astype(np.float64)
    best = None
    for s in range(40):
        C, lab = kmeans2(F, 4, minit="++", seed=s)
        inertia = ((F - C[lab]) ** 2).sum()
        if best is None or inertia < best[0]:
            best = (inertia, lab)
    acc = hungarian_acc(labels, best[1])
    assert 0.7 <= acc <= 0.95
    assert images.min() >= -1 and images.max() <= 1


@given(st.integers(1, 8), st.integers(0, 6), st.integers(0, 3))
def test_label_histogram_matches_spec(K, n, seed):
    spec = DatasetSpec(n_classes=K, samples_per_class=n, seed=seed, image_size=8)
    images, labels = generate_synthetic(spec)
    assert images.shape == (K * n, 1, 8, 8)
    np.testing.assert_array_equal(np.bincount(labels, minlength=K), np.full(K, n))


def test_empty_and_noiseless_datasets():
    images, labels = generate_synthetic(DatasetSpec(samples_per_class=0))
    assert images.shape[0] == 0 and labels.size == 0
    images, labels = generate_synthetic(DatasetSpec(noise=0.0, jitter=0, samples_per_class=5))
    for k in range(4):
        cls = images[labels == k]
        assert np.all(cls == cls[0])


def test_generator_is_deterministic():
    a, _ = generate_synthetic(DatasetSpec(seed=9, samples_per_class=4))
    b, _ = generate_synthetic(DatasetSpec(seed=9, samples_per_class=4))
    c, _ = generate_synthetic(DatasetSpec(seed=10, samples_per_class=4))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_spec_json_roundtrip():
    spec = DatasetSpec(kind="synthetic-gaussian-digits", n_classes=5, noise=0.1)
    assert DatasetSpec.from_json(spec.to_json()) == spec
    with pytest.raises(ParameterError):
        DatasetSpec(kind="cifar").validate()
    with pytest.raises(ParameterError):
        DatasetSpec(image_size=12).validate()


def test_idx_handcrafted_fixture(tmp_path):
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(struct.pack(">IIII", 0x803, 1, 2, 2) + bytes([0, 255, 51, 204]))
    lab.write_bytes(struct.pack(">II", 0x801, 1) + bytes([7]))
    images, labels = load_idx(img, lab)
    np.testing.assert_allclose(images[0, 0], [[-1.0, 1.0], [51 / 127.5 - 1, 204 / 127.5 - 1]], rtol=1e-6)
    assert labels.tolist() == [7]


def test_idx_extremes_gzip_and_padding(tmp_path):
    px = np.stack([np.zeros((4, 4)), np.full((4, 4), 255)]).astype(np.uint8)
    write_idx(tmp_path / "i", tmp_path / "l", px, [0, 1])
    (tmp_path / "i.gz").write_bytes(gzip.compress((tmp_path / "i").read_bytes()))
    images, labels = load_idx(tmp_path / "i.gz", tmp_path / "l", image_size=8)
    assert images.shape == (2, 1, 8, 8)
    assert np.all(images[0] == -1.0)
    assert np.all(images[1, 0, 2:6, 2:6] == 1.0) and images[1, 0, 0, 0] == -1.0


def test_idx_rejects_bad_files(tmp_path):
    px = np.zeros((3, 4, 4), np.uint8)
    write_idx(tmp_path / "i", tmp_path / "l", px, [0, 1, 2])
    good = (tmp_path / "i").read_bytes()
    (tmp_path / "t").write_bytes(good[:-1])
    with pytest.raises(FormatError):
        load_idx(tmp_path / "t", tmp_path / "l")
    (tmp_path / "m").write_bytes(b"\0\0\x08\x04" + good[4:])
    with pytest.raises(FormatError):
        load_idx(tmp_path / "m", tmp_path / "l")
    write_idx(tmp_path / "i2", tmp_path / "l2", px[:2], [0, 1])
    with pytest.raises(FormatError):
        load_idx(tmp_path / "i", tmp_path / "l2")
    with pytest.raises(FormatError):
        load_idx(tmp_path / "missing", tmp_path / "l")


def test_load_dataset_dispatch(tmp_path):
    write_idx(tmp_path / "i", tmp_path / "l", np.zeros((2, 8, 8), np.uint8), [1, 0])
    spec = DatasetSpec(kind="idx-pair", images_path=str(tmp_path / "i"), labels_path=str(tmp_path / "l"),
                       image_size=8)
    images, labels = load_dataset(spec)
    assert images.shape == (2, 1, 8, 8)


def test_config_roundtrip_and_hash(tmp_path):
    cfg = ExperimentConfig()
    save_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back == cfg and back.config_hash() == cfg.config_hash()
    moved = config_from_dict({**cfg.to_dict(), "out_dir": "elsewhere"})
    assert moved.config_hash() == cfg.config_hash()
    assert cfg.with_seed(1).config_hash() != cfg.config_hash()
    assert len(cfg.config_hash()) == 16 and cfg.K == 4


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ParameterError):
        config_from_dict({"dataset": {"colour": 1}})
    with pytest.raises(ParameterError):
        config_from_dict({"speed": 3})
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ParameterError):
        load_config(tmp_path / "bad.json")
