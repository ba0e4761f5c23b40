"""Ablation ladder over several seeds: random (l,t) -> COL only -> COL+COT -> full DiEC.

Each seed is a full run with the labeled grid switched on.  Runs that already
have a metrics.json are reused.

    python3 scripts/ablation_ladder.py --seeds 0 1 2 --root runs/ladder
"""
import argparse
import json
import logging
from pathlib import Path

import numpy as np

from diec.config import ExperimentConfig
from diec.pipeline import run_experiment
from diec.report import heatmap_svg

RUNGS = ["random_lt", "col_only", "col_cot", "full_diec"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--root", default="runs/ladder")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    root = Path(args.root)

    table = []
    for seed in args.seeds:
        out = root / f"seed{seed}"
        if not (out / "metrics.json").exists():
            cfg = ExperimentConfig(seed=seed, grid_full=True)
            run_experiment(cfg, out)
        lad = json.loads((out / "metrics.json").read_text())["ladder"]
        table.append([lad[k] for k in RUNGS])
    table = np.array(table)

    print("seed  " + "  ".join(f"{k:>10s}" for k in RUNGS) + "   ordering")
    for seed, row in zip(args.seeds, table):
        steps = np.diff(row)
        ok = steps[0] > 0 and steps[1] == steps.max() and steps[2] >= 0.01
        print(f"{seed:4d}  " + "  ".join(f"{v:10.4f}" for v in row) + f"   {'ok' if ok else 'VIOLATED'}")
    print("mean  " + "  ".join(f"{v:10.4f}" for v in table.mean(0)))
    (root / "ladder.svg").write_text(heatmap_svg(table, [f"seed {s}" for s in args.seeds], RUNGS, "ACC by rung"))


if __name__ == "__main__":
    main()
