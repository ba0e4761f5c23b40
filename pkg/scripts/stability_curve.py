"""Denoising loss during fine-tuning with and without the consistency branch.

Starts both arms from the same pretrained checkpoint (a finished run
directory) and writes stability.svg next to the two train logs.

    python3 scripts/stability_curve.py runs/seed0 --epochs 40
"""
import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from diec.config import load_config
from diec.datasets import load_dataset
from diec.pipeline import load_model_checkpoint, stage_train
from diec.report import line_chart_svg


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("run_dir")
    ap.add_argument("--epochs", type=int, default=40)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    run = Path(args.run_dir)
    cfg = load_config(run / "config.json")
    search = json.loads((run / "search.json").read_text())
    images, labels = load_dataset(cfg.dataset, cfg.backbone.image_size)

    curves = {}
    for name, use_lre in [("with L_Re", True), ("without L_Re", False)]:
        model, sched, _, _ = load_model_checkpoint(run / "checkpoint_pretrained.dck")
        arm = replace(cfg, diec=replace(cfg.diec, use_lre=use_lre, max_epochs=args.epochs, tol=0.0))
        out = run / ("stability_lre" if use_lre else "stability_nolre")
        out.mkdir(exist_ok=True)
        _, rows, summary = stage_train(arm, out, model, sched, images, labels, search["col"], search["cot"])
        rows = [r for r in rows if r["event"] != "final"]
        curves[name] = np.array([r["denoise_eval"] for r in rows]) / summary["pre_finetune_denoise"]
        print(f"{name:14s} max ratio {curves[name].max():.3f}  final ACC {summary['final']['acc']:.4f}")

    x = np.arange(len(next(iter(curves.values()))))
    (run / "stability.svg").write_text(line_chart_svg(x, curves, "Denoising loss / pre-fine-tuning value",
                                                      "epoch", "ratio"))


if __name__ == "__main__":
    main()
