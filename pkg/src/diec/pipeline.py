"""End-to-end experiment: pretrain -> search -> Phase-1 init -> DiEC training -> evaluation."""
from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .clusterability import kmeans
from .config import ExperimentConfig, save_config
from .datasets import load_dataset
from .diffusion import NoiseSchedule, build_schedule, fixed_denoising_loss, pretrain, sample
from .engine import LOG_FIELDS, ClusterState, ResidualHead, averaged_embedding, init_centroids, train
from .errors import DiecError, FormatError
from .metrics import evaluate
from .numeric import pca_fit_transform, substream
from .report import heatmap_svg, image_grid, line_chart_svg, write_pnm
from .search import (LabeledGrid, SearchResult, exhaustive_labeled_grid, run_optimal_search, smoothed_argmax)
from .tensor_io import canonical_json, read_checkpoint, write_checkpoint, write_dtf, write_table
from .unet import TAPS, Architecture, TinyUNet, build_model, tap_shapes

log = logging.getLogger(__name__)


class StageError(DiecError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, typ, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n")


def _table(h, path, header, rows) -> None:
    write_table(path, header, rows, comment=f"config_hash={h}")


# ------------------------------------------------------------------ checkpoints


def save_model_checkpoint(path, model: TinyUNet, sched: NoiseSchedule, config_hash: str, extra=None) -> None:
    header = {"architecture": model.arch.to_dict(), "schedule": sched.to_dict(), "config_hash": config_hash}
    tensors = {f"model.{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    for k, v in (extra or {}).items():
        tensors[k] = v
    write_checkpoint(path, header, tensors)


def load_model_checkpoint(path):
    header, tensors = read_checkpoint(path)
    try:
        arch = Architecture.from_dict(header["architecture"])
        sched = build_schedule(**header["schedule"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"checkpoint header incomplete: {exc}") from exc
    model = TinyUNet(arch)
    state = {k[len("model."):]: torch.from_numpy(v.copy()) for k, v in tensors.items() if k.startswith("model.")}
    model.load_state_dict(state)
    model.eval()
    extra = {k: v for k, v in tensors.items() if not k.startswith("model.")}
    return model, sched, header, extra


# ----------------------------------------------------------------------- stages


def stage_pretrain(cfg: ExperimentConfig, out: Path, images: np.ndarray):
    bb = cfg.backbone
    h = cfg.config_hash()
    sched = build_schedule(bb.T, bb.beta_start, bb.beta_end)
    model = build_model(bb.architecture(), cfg.seed)
    history = pretrain(model, images, sched, epochs=bb.epochs, batch=bb.batch, lr=bb.lr, seed=cfg.seed,
                       log=lambda r: log.info("pretrain epoch %d loss %.5f", r["epoch"], r["loss"]))
    _table(h, out / "pretrain_log.csv", ["epoch", "loss"], [[r["epoch"], r["loss"]] for r in history])
    save_model_checkpoint(out / "checkpoint_pretrained.dck", model, sched, h)
    return model, sched, history


def stage_search(cfg: ExperimentConfig, out: Path, model: TinyUNet, sched: NoiseSchedule, images: np.ndarray,
                 labels: np.ndarray | None = None):
    h = cfg.config_hash()
    search_cfg = replace(cfg.search, seed=cfg.seed)
    result = run_optimal_search(model, images, sched, search_cfg, cfg.K)
    grid = result.grid
    header, rows = grid.to_csv_rows("smoothed")
    _table(h, out / "grid_stage1_smoothed.csv", header, rows)
    header, rows = grid.to_csv_rows("raw")
    _table(h, out / "grid_stage1_raw.csv", header, rows)
    tr = result.trace
    _table(h, out / "cot_trace.csv", ["t", "ss_raw", "ss_online_smoothed"],
                [[t, r, s] for t, r, s in zip(tr.timesteps, tr.raw, tr.smoothed)])
    (out / "heatmap_stage1.svg").write_text(heatmap_svg(
        grid.smoothed, grid.layers, grid.timesteps, "Smoothed aligned Scott Score (layer x timestep)",
        highlight=(grid.layers.index(result.col), None), note=f"config {h}; COL={result.col}"))
    payload = {**result.to_dict(), "config_hash": h}
    labeled = None
    if cfg.grid_full and labels is not None:
        labeled = exhaustive_labeled_grid(model, images, labels, sched, grid.timesteps, cfg.K, cfg.grid_trials,
                                          cfg.seed)
        _table(h, out / "grid_full_acc.csv", ["layer"] + [str(t) for t in labeled.timesteps],
                    [[l] + list(map(float, labeled.acc[i])) for i, l in enumerate(labeled.layers)])
        best_l, best_t, best_acc = labeled.best_cell()
        col_row = labeled.acc[labeled.layers.index(result.col)]
        acc_peak = labeled.timesteps[smoothed_argmax(col_row, search_cfg.w)]
        payload["grid_full"] = {
            "best_layer": best_l, "best_t": best_t, "best_acc": best_acc,
            "selected_acc": labeled.cell(result.col, result.cot),
            "smoothed_acc_peak_t": acc_peak,
            "grid_mean_acc": float(labeled.acc.mean()),
            "col_row_mean_acc": float(col_row.mean()),
        }
        (out / "heatmap_labeled_acc.svg").write_text(heatmap_svg(
            labeled.acc, labeled.layers, labeled.timesteps, "k-means ACC (labels, reporting only)",
            highlight=(labeled.layers.index(result.col), labeled.timesteps.index(result.cot)), note=f"config {h}"))
    write_json(out / "search.json", payload)
    series = {"SS (stage 2)": tr.raw, "SS smoothed": tr.smoothed}
    if labeled is not None:
        idx = [labeled.timesteps.index(t) for t in tr.timesteps]
        row = labeled.acc[labeled.layers.index(result.col)]
        series["ACC"] = row[idx]
    (out / "curve_col.svg").write_text(line_chart_svg(
        tr.timesteps, series, f"Scores vs timestep at {result.col} (min-max scaled)", "timestep t", "scaled score",
        normalize=True, markers={"COT": result.cot}, note=f"config {h}"))
    return result, labeled


def stage_train(cfg: ExperimentConfig, out: Path, model: TinyUNet, sched: NoiseSchedule, images: np.ndarray,
                labels: np.ndarray | None, col: str, cot: int):
    h = cfg.config_hash()
    dim = tap_shapes(model.arch)[col][0] if cfg.diec.pooling == "avg" else int(np.prod(tap_shapes(model.arch)[col]))
    head = ResidualHead(dim, seed=cfg.seed)
    dcfg = replace(cfg.diec, seed=cfg.seed)
    pre_loss = fixed_denoising_loss(model, images, sched, cfg.seed)
    centroids, zbar = init_centroids(model, head, images, col, cot, sched, dcfg.trials, cfg.K, cfg.seed, dcfg.pooling)
    phase1_labels = kmeans(zbar, cfg.K, substream(cfg.seed, "init-kmeans")).assignments
    state, rows = train(model, head, images, col, cot, sched, dcfg, cfg.K, labels=labels, centroids=centroids,
                        on_epoch=lambda r: log.info("train epoch %d ACC %.4f L_Re %.4f eval %.4f",
                                                    r["epoch"], r["ACC"], r["L_Re"], r["denoise_eval"]))
    _table(h, out / "train_log.csv", LOG_FIELDS, [[r[k] for k in LOG_FIELDS] for r in rows])
    epochs = [r["epoch"] for r in rows if r["event"] != "final"]
    evals = [r["denoise_eval"] for r in rows if r["event"] != "final"]
    (out / "denoise_stability.svg").write_text(line_chart_svg(
        epochs, {"denoising loss" + ("" if dcfg.use_lre else " (no L_Re)"): evals},
        "Random-timestep denoising loss during fine-tuning", "epoch", "MSE", note=f"config {h}"))
    write_dtf(out / "centroids.dtf", state.centroids)
    write_dtf(out / "labels.dtf", state.labels.astype(np.float32))
    write_json(out / "cluster_state.json", {**state.metadata(), "col": col, "cot": cot, "config_hash": h})
    extra = {"centroids": state.centroids.astype(np.float32)}
    extra.update({f"head.{k}": v.detach().numpy() for k, v in head.state_dict().items()})
    save_model_checkpoint(out / "checkpoint_finetuned.dck", model, sched, h, extra)
    zfinal = averaged_embedding(model, head, images, col, cot, sched, dcfg.trials, cfg.seed, "export", dcfg.pooling)
    if zfinal.shape[0] > 2:
        _, xy = pca_fit_transform(zfinal, min(2, zfinal.shape[1], zfinal.shape[0] - 1))
        lab = labels if labels is not None else np.full(len(xy), -1)
        _table(h, out / "pca_scatter.csv", ["pc1", "pc2", "label", "cluster"],
                    [[float(a[0]), float(a[-1]), int(b), int(c)] for a, b, c in zip(xy, lab, state.labels)])
    post_loss = fixed_denoising_loss(model, images, sched, cfg.seed)
    summary = {"pre_finetune_denoise": pre_loss, "post_finetune_denoise": post_loss,
               "max_denoise_ratio": max(evals) / pre_loss if evals else 1.0,
               "min_denoise_ratio": min(evals) / pre_loss if evals else 1.0}
    if labels is not None:
        summary["phase1"] = evaluate(labels, phase1_labels)
        summary["final"] = evaluate(labels, state.labels)
    return state, rows, summary


def run_experiment(cfg: ExperimentConfig, out_dir=None, with_samples: bool = True) -> Path:
    """Run every stage, writing artifacts under ``out_dir`` (default: cfg.out_dir)."""
    with _Stage("config"):
        cfg.validate()
        out = Path(out_dir or cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        h = cfg.config_hash()
        save_config(cfg, out / "config.json")
    with _Stage("data"):
        images, labels = load_dataset(cfg.dataset, cfg.backbone.image_size)
    with _Stage("pretrain"):
        model, sched, history = stage_pretrain(cfg, out, images)
        if with_samples and cfg.n_samples > 0:
            write_pnm(out / "samples_before.pgm", image_grid(sample(model, sched, cfg.n_samples, cfg.seed)),
                      comment=f"config_hash={h}")
    with _Stage("search"):
        result, labeled = stage_search(cfg, out, model, sched, images, labels)
    with _Stage("train"):
        state, rows, summary = stage_train(cfg, out, model, sched, images, labels, result.col, result.cot)
        if with_samples and cfg.n_samples > 0:
            write_pnm(out / "samples_after.pgm", image_grid(sample(model, sched, cfg.n_samples, cfg.seed)),
                      comment=f"config_hash={h}")
    with _Stage("eval"):
        metrics = {"config_hash": h, "col": result.col, "cot": result.cot,
                   "pretrain_final_loss": history[-1]["loss"] if history else None, **summary}
        if labeled is not None and "final" in summary:
            metrics["ladder"] = {
                "random_lt": float(labeled.acc.mean()),
                "col_only": float(labeled.acc[labeled.layers.index(result.col)].mean()),
                "col_cot": summary["phase1"]["acc"],
                "full_diec": summary["final"]["acc"],
            }
        write_json(out / "metrics.json", metrics)
    return out
