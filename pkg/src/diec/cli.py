"""Command line entry point: ``diec pretrain|search|train|eval|report|sample|run``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config, save_config
from .datasets import load_dataset
from .diffusion import sample
from .errors import DiecError, FormatError, ParameterError
from .metrics import evaluate
from .pipeline import (load_model_checkpoint, run_experiment, stage_pretrain, stage_search, stage_train, write_json,
                       StageError)
from .report import heatmap_svg, image_grid, write_pnm
from .tensor_io import write_table
from .unet import TAPS

log = logging.getLogger("diec")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "freeze_backbone", False):
        cfg = replace(cfg, diec=replace(cfg.diec, freeze_backbone=True))
    if getattr(args, "no_lre", False):
        cfg = replace(cfg, diec=replace(cfg.diec, use_lre=False))
    if getattr(args, "grid_full", False):
        cfg = replace(cfg, grid_full=True)
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=str(args.out))
    cfg.validate()
    return cfg


def _out(cfg) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    return out


def _checkpoint(args, out: Path, name: str) -> Path:
    path = Path(args.checkpoint) if getattr(args, "checkpoint", None) else out / name
    if not path.exists():
        raise ParameterError(f"checkpoint not found: {path}")
    return path


def _check_hash(header: dict, cfg: ExperimentConfig, path) -> None:
    if header.get("config_hash") not in (None, cfg.config_hash()):
        log.warning("%s was written under config %s, current config is %s", path, header.get("config_hash"),
                    cfg.config_hash())


def cmd_pretrain(args):
    cfg = _config(args)
    out = _out(cfg)
    images, _ = load_dataset(cfg.dataset, cfg.backbone.image_size)
    _, _, history = stage_pretrain(cfg, out, images)
    print(json.dumps({"checkpoint": str(out / "checkpoint_pretrained.dck"),
                      "final_loss": history[-1]["loss"] if history else None, "config_hash": cfg.config_hash()}))


def cmd_search(args):
    cfg = _config(args)
    out = _out(cfg)
    path = _checkpoint(args, out, "checkpoint_pretrained.dck")
    model, sched, header, _ = load_model_checkpoint(path)
    _check_hash(header, cfg, path)
    images, labels = load_dataset(cfg.dataset, cfg.backbone.image_size)
    result, _ = stage_search(cfg, out, model, sched, images, labels)
    print(json.dumps({"col": result.col, "cot": result.cot, "config_hash": cfg.config_hash()}))


def cmd_train(args):
    cfg = _config(args)
    out = _out(cfg)
    path = _checkpoint(args, out, "checkpoint_pretrained.dck")
    model, sched, header, _ = load_model_checkpoint(path)
    _check_hash(header, cfg, path)
    layer, t = args.layer, args.timestep
    if layer is None or t is None:
        search_path = out / "search.json"
        if not search_path.exists():
            raise ParameterError("no search.json in the output directory; pass --layer and --timestep")
        found = json.loads(search_path.read_text())
        layer = layer or found["col"]
        t = t if t is not None else int(found["cot"])
    if layer not in TAPS:
        raise ParameterError(f"unknown tap id {layer!r}")
    images, labels = load_dataset(cfg.dataset, cfg.backbone.image_size)
    _, _, summary = stage_train(cfg, out, model, sched, images, labels, layer, int(t))
    metrics = {"config_hash": cfg.config_hash(), "col": layer, "cot": int(t), **summary}
    write_json(out / "metrics.json", metrics)
    print(json.dumps(metrics, sort_keys=True))


def read_label_file(path) -> np.ndarray:
    try:
        lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    except FileNotFoundError as exc:
        raise ParameterError(f"label file not found: {path}") from exc
    try:
        return np.array([int(v) for v in lines], dtype=np.int64)
    except ValueError as exc:
        raise FormatError(f"{path}: expected one integer per line ({exc})") from exc


def cmd_eval(args):
    y_true = read_label_file(args.labels_true)
    y_pred = read_label_file(args.labels_pred)
    record = {k: float(v) for k, v in evaluate(y_true, y_pred).items()}
    record["n"] = int(y_true.size)
    text = json.dumps(record, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_report(args):
    runs = []
    for d in args.runs:
        path = Path(d) / "metrics.json"
        if not path.exists():
            raise ParameterError(f"missing {path}")
        try:
            runs.append((d, json.loads(path.read_text())))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    hashes = {m.get("config_hash") for _, m in runs}
    if len(hashes) > 1:
        raise ParameterError(f"runs were produced by different configs: {sorted(map(str, hashes))}")
    rows = []
    for d, m in runs:
        final = m.get("final", {})
        phase1 = m.get("phase1", {})
        rows.append([str(d), m.get("config_hash"), m.get("col"), m.get("cot"), phase1.get("acc"), final.get("acc"),
                     final.get("nmi"), final.get("ari"), m.get("max_denoise_ratio")])
    header = ["run", "config_hash", "col", "cot", "phase1_acc", "acc", "nmi", "ari", "max_denoise_ratio"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "summary.csv", header, rows, comment=f"config_hash={hashes.pop()}")
    ladders = [m["ladder"] for _, m in runs if "ladder" in m]
    if ladders:
        keys = ["random_lt", "col_only", "col_cot", "full_diec"]
        vals = np.array([[l[k] for k in keys] for l in ladders])
        (out / "ladder.svg").write_text(heatmap_svg(vals, [f"run{i}" for i in range(len(ladders))], keys,
                                                    "Ablation ladder ACC"))
    print(json.dumps({"runs": len(runs), "summary": str(out / "summary.csv")}))


def cmd_sample(args):
    cfg = _config(args)
    out = Path(cfg.out_dir)
    path = _checkpoint(args, out, "checkpoint_finetuned.dck" if (out / "checkpoint_finetuned.dck").exists()
                       else "checkpoint_pretrained.dck")
    model, sched, _, _ = load_model_checkpoint(path)
    imgs = sample(model, sched, args.n, cfg.seed)
    target = Path(args.image) if args.image else out / "samples.pgm"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_pnm(target, image_grid(imgs), comment=f"config_hash={cfg.config_hash()}")
    print(json.dumps({"samples": str(target), "n": args.n}))


def cmd_run(args):
    cfg = _config(args)
    out = run_experiment(cfg)
    print((out / "metrics.json").read_text().strip())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diec", description="Diffusion-feature deep clustering at desk scale")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, flags=()):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (overrides out_dir)")
        if "train" in flags:
            sp.add_argument("--freeze-backbone", action="store_true")
            sp.add_argument("--no-lre", action="store_true", help="drop the denoising consistency branch")
        if "grid" in flags:
            sp.add_argument("--grid-full", action="store_true", help="also run the labeled exhaustive grid")
        if "ckpt" in flags:
            sp.add_argument("--checkpoint")

    sp = sub.add_parser("pretrain", help="train the denoiser")
    common(sp)
    sp.set_defaults(func=cmd_pretrain)
    sp = sub.add_parser("search", help="unsupervised layer/timestep search")
    common(sp, ("grid", "ckpt"))
    sp.set_defaults(func=cmd_search)
    sp = sub.add_parser("train", help="joint clustering fine-tuning")
    common(sp, ("train", "ckpt"))
    sp.add_argument("--layer", choices=TAPS)
    sp.add_argument("--timestep", type=int)
    sp.set_defaults(func=cmd_train)
    sp = sub.add_parser("eval", help="ACC/NMI/ARI from two label files")
    sp.add_argument("labels_true")
    sp.add_argument("labels_pred")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)
    sp = sub.add_parser("report", help="aggregate metrics from run directories")
    sp.add_argument("runs", nargs="+")
    sp.add_argument("--out", default="report")
    sp.set_defaults(func=cmd_report)
    sp = sub.add_parser("sample", help="ancestral samples from a checkpoint")
    common(sp, ("ckpt",))
    sp.add_argument("-n", type=int, default=16)
    sp.add_argument("--image", help="output PGM path")
    sp.set_defaults(func=cmd_sample)
    sp = sub.add_parser("run", help="every stage end to end")
    common(sp, ("train", "grid"))
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except DiecError as exc:
        print(f"diec {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
