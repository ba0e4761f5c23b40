import numpy as np
import pytest
from hypothesis import given, strategies as st

from diec.datasets import DatasetSpec, generate_synthetic
from diec.clusterability import ScoreGrid, align_embeddings, scott_score
from diec.diffusion import build_schedule, extract_all_taps
from diec.errors import ParameterError
from diec.numeric import moving_average_centered, substream
from diec.search import (SearchConfig, online_argmax, run_optimal_search, sample_subset, select_col_from_grid,
                         smoothed_argmax)
from diec.unet import TAPS, Architecture, build_model


@pytest.fixture(scope="module")
def toy():
    arch = Architecture(image_size=8, widths=(8, 8, 16, 16), time_dim=16, groups=4)
    model = build_model(arch, 0)
    rng = np.random.default_rng(0)
    base = np.sign(rng.standard_normal((3, 1, 8, 8))).astype(np.float32)
    images = np.concatenate([b + 0.3 * rng.standard_normal((12, 1, 8, 8)) for b in base]).astype(np.float32)
    return model, build_schedule(20), np.clip(images, -1, 1)


def test_single_layer_is_selected_regardless():
    g = ScoreGrid(["U2"], [1, 2, 3], np.array([[-5.0, -9.0, -1.0]]), window=1)
    assert select_col_from_grid(g, 0.2)[0] == "U2"


@given(st.integers(0, 8), st.floats(0.05, 1.0), st.integers(0, 1000))
def test_dominant_row_wins(layer, rho, seed):
    raw = np.random.default_rng(seed).uniform(-1, 1, (9, 10))
    raw[layer] = raw.max() + 10
    g = ScoreGrid(list(TAPS), list(range(1, 11)), raw, window=3)
    assert select_col_from_grid(g, rho)[0] == TAPS[layer]


def test_ties_go_to_shallowest_layer():
    g = ScoreGrid(list(TAPS), [1, 2], np.ones((9, 2)), window=1)
    assert select_col_from_grid(g, 0.5)[0] == "D1"


def test_decreasing_trace_stops_early():
    vals = {t: -float(t) for t in range(1, 21)}
    seen = []
    cot, trace = online_argmax(lambda t: seen.append(t) or vals[t], list(range(1, 21)), w=5, patience=3)
    assert cot == 1 and seen == [1, 2, 3, 4] and trace.early_stopped


def test_increasing_trace_runs_to_the_end():
    ts = list(range(1, 41, 1))
    cot, trace = online_argmax(lambda t: float(t), ts, w=5, patience=2)
    assert cot == ts[-1] and not trace.early_stopped and len(trace.raw) == len(ts)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=40), st.integers(0, 4), st.integers(1, 6))
def test_online_smoothing_equals_offline_on_prefix(values, half, patience):
    w = 2 * half + 1
    ts = list(range(len(values)))
    cot, trace = online_argmax(lambda t: values[t], ts, w, patience)
    assert trace.smoothed == moving_average_centered(trace.raw, w).tolist()
    assert trace.smoothed[trace.timesteps.index(cot)] == max(trace.smoothed)
    assert trace.raw == values[: len(trace.raw)]


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=40), st.integers(0, 3), st.integers(0, 4))
def test_early_stop_never_changes_a_settled_peak(values, half, extra):
    w = 2 * half + 1
    patience = half + extra + (half == 0)
    ts = list(range(len(values)))
    full_cot, full = online_argmax(lambda t: values[t], ts, w, len(values) + 1)
    cot, trace = online_argmax(lambda t: values[t], ts, w, patience)
    n = len(trace.timesteps)
    if full_cot <= n - 1 - patience:
        assert cot == full_cot
    if not trace.early_stopped:
        assert cot == full_cot


def test_subset_errors_and_determinism():
    with pytest.raises(ParameterError):
        sample_subset(10, 11, 0)
    np.testing.assert_array_equal(sample_subset(100, 20, 3), sample_subset(100, 20, 3))
    np.testing.assert_array_equal(sample_subset(5, 5, 0), np.arange(5))
    with pytest.raises(ParameterError):
        SearchConfig(w=4).validate()
    with pytest.raises(ParameterError):
        SearchConfig(m=3).validate(K=3)


def test_full_resolution_search_equals_exhaustive(toy):
    model, sched, images = toy
    cfg = SearchConfig(T_s=10, stride=1, m=images.shape[0], R=1, d=4, w=3, rho=0.3, patience=100, seed=1)
    res = run_optimal_search(model, images, sched, cfg, K=3)
    ts = cfg.timesteps()
    raw = np.zeros((9, len(ts)))
    for j, t in enumerate(ts):
        feats = extract_all_taps(model, images, t, sched, trials=1, seed=1, key="stage1")
        for i, layer in enumerate(TAPS):
            raw[i, j] = scott_score(align_embeddings(feats[layer], 4), 3, substream(1, "stage1-kmeans", layer, t))
    np.testing.assert_allclose(res.grid.raw, raw)
    sm = np.stack([moving_average_centered(r, 3) for r in raw])
    scores = [np.sort(r)[::-1][: int(np.ceil(0.3 * len(ts)))].mean() for r in sm]
    assert res.col == TAPS[int(np.argmax(scores))]
    assert res.cot == ts[int(np.argmax(res.trace.smoothed))]
    assert res.cot in res.trace.timesteps


def test_search_is_deterministic_and_counts_passes(toy):
    model, sched, images = toy
    cfg = SearchConfig(T_s=20, stride=4, m=24, R=2, d=4, w=3, rho=0.2, patience=2, seed=5)
    a = run_optimal_search(model, images, sched, cfg, K=3)
    b = run_optimal_search(model, images, sched, cfg, K=3)
    assert (a.col, a.cot) == (b.col, b.cot)
    np.testing.assert_array_equal(a.grid.raw, b.grid.raw)
    n_t = len(cfg.timesteps())
    assert a.forward_passes["stage1"] == cfg.m * cfg.R * n_t
    assert a.forward_passes["stage2"] == cfg.m * cfg.R * len(a.trace.timesteps)
    assert a.forward_passes["total"] == a.forward_passes["stage1"] + a.forward_passes["stage2"]


def test_more_trials_do_not_increase_score_variance():
    # pooled over three timesteps: single cells are dominated by k-means partition flips
    images, _ = generate_synthetic(DatasetSpec(noise=0.5, jitter=1, contrast=0.3, samples_per_class=16))
    model = build_model(Architecture(image_size=16, widths=(8, 8, 16, 16), time_dim=16, groups=4), 0)
    sched = build_schedule()

    def spread(R):
        total = 0.0
        for t in (21, 101, 181):
            vals = [scott_score(extract_all_taps(model, images, t, sched, trials=R, seed=s, taps=("U4",))["U4"], 4,
                                substream(0, "var")) for s in range(10)]
            total += np.var(vals)
        return total

    assert spread(8) <= 1.1 * spread(1)


def test_smoothed_argmax():
    # the shrinking edge window makes position 0 average only two values
    assert smoothed_argmax([0, 10, 0, 0, 3, 3, 3], 3) == 0
    assert smoothed_argmax([0, 1, 5, 1, 0], 3) == 2
    assert smoothed_argmax([0, 0, 5, 0, 0], 1) == 2
