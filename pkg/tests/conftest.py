import time
from dataclasses import replace

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def tiny_config(seed: int = 0, epochs: int = 2, grid_full: bool = True):
    """Seconds-scale experiment used by the CLI, pipeline and determinism tests."""
    from dataclasses import replace

    from diec.config import ExperimentConfig
    cfg = ExperimentConfig(seed=seed, grid_full=grid_full, grid_trials=1, n_samples=4)
    return replace(
        cfg,
        dataset=replace(cfg.dataset, samples_per_class=8),
        backbone=replace(cfg.backbone, widths=(8, 8, 16, 16), time_dim=16, groups=4, epochs=2, batch=16),
        search=replace(cfg.search, T_s=40, stride=10, m=32, R=1, d=8, w=3, patience=2),
        diec=replace(cfg.diec, max_epochs=epochs, trials=1, knn=4, batch=16, target_interval=1, warmup_epochs=0),
    )


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[n])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def pipeline_runs(tmp_path_factory):
    """Full default runs with the labeled grid, one per seed; shared by the slow tests."""
    from diec.config import ExperimentConfig
    from diec.pipeline import run_experiment
    runs = {}
    for seed in SEEDS:
        cfg = replace(ExperimentConfig(seed=seed), grid_full=True)
        start = time.perf_counter()
        out = run_experiment(cfg, tmp_path_factory.mktemp(f"seed{seed}"))
        runs[seed] = (cfg, out, time.perf_counter() - start)
    return runs
