"""Scott Score grid vs labeled k-means ACC grid for a pretrained checkpoint.

    python3 scripts/grid_heatmap.py runs/seed0/checkpoint_pretrained.dck --out runs/seed0/grids
"""
import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from diec.config import ExperimentConfig
from diec.datasets import load_dataset
from diec.numeric import moving_average_centered
from diec.pipeline import load_model_checkpoint
from diec.report import heatmap_svg
from diec.search import exhaustive_labeled_grid, sample_subset, score_grid


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("checkpoint")
    ap.add_argument("--out", default="grids")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cfg = ExperimentConfig(seed=args.seed)
    scfg = replace(cfg.search, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    model, sched, _, _ = load_model_checkpoint(args.checkpoint)
    images, labels = load_dataset(cfg.dataset, cfg.backbone.image_size)
    idx = sample_subset(len(images), scfg.m, args.seed)
    grid = score_grid(model, images[idx], sched, scfg, cfg.K)
    acc = exhaustive_labeled_grid(model, images, labels, sched, scfg.timesteps(), cfg.K, cfg.grid_trials, args.seed)

    smoothed = np.stack([moving_average_centered(r, scfg.w) for r in grid.raw])
    ts = [str(t) for t in grid.timesteps]
    (out / "scott_smoothed.svg").write_text(heatmap_svg(smoothed, grid.layers, ts, "smoothed Scott Score"))
    (out / "labeled_acc.svg").write_text(heatmap_svg(acc.acc, acc.layers, ts, "labeled k-means ACC"))
    np.set_printoptions(linewidth=200, precision=2, suppress=True)
    print("rows:", grid.layers)
    print("ACC (every other t)\n", acc.acc[:, ::2])
    i, j = np.unravel_index(np.argmax(acc.acc), acc.acc.shape)
    print(f"best cell {acc.layers[i]} t={grid.timesteps[j]} ACC {acc.acc[i, j]:.4f}")


if __name__ == "__main__":
    main()
