"""Train -> per-epoch evaluation -> checkpoints -> metrics CSV."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from gairlab.attacks import RandomStart
from gairlab.checkpoint import save_checkpoint
from gairlab.config import ExperimentConfig, serialize_config
from gairlab.data import Dataset, gen_circles, gen_gaussian_blobs, load_idx
from gairlab.evaluation import (
    CheckpointHistory,
    boundary_flatness,
    lower_median,
    robust_error,
    select_checkpoint,
    standard_error,
)
from gairlab.nn import Model, init_model
from gairlab.optim import OptimizerState
from gairlab.trainers import train_epoch

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    out_dir: Path
    rows: list[dict]
    summary: dict
    model: Model


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    d, seed = cfg.data, cfg.seed
    if d.kind == "blobs":
        return (
            gen_gaussian_blobs(2 * seed, d.n_per_class, d.means, d.sigma),
            gen_gaussian_blobs(2 * seed + 1, d.test_n_per_class, d.means, d.sigma),
        )
    if d.kind == "circles":
        return (
            gen_circles(2 * seed, d.n_per_class, d.radii, d.noise),
            gen_circles(2 * seed + 1, d.test_n_per_class, d.radii, d.noise),
        )
    if not (d.train_images and d.train_labels and d.test_images and d.test_labels):
        raise ValueError("idx data needs train_images, train_labels, test_images and test_labels")
    cc = d.class_count or None
    train = load_idx(d.train_images, d.train_labels, cc, d.limit or None)
    test = load_idx(d.test_images, d.test_labels, cc or train.class_count, d.test_limit or None)
    return train, test


def layer_specs(cfg: ExperimentConfig, in_features: int, class_count: int) -> list[dict]:
    specs: list[dict] = []
    width = in_features
    if cfg.model.conv:
        c, h, w = cfg.model.image
        if c * h * w != in_features:
            raise ValueError(f"image {cfg.model.image} does not match {in_features} input features")
        for out_ch, k in cfg.model.conv:
            specs += [
                {"type": "conv2d", "in_channels": c, "out_channels": out_ch, "kernel": k, "height": h, "width": w},
                {"type": "relu"},
            ]
            c = out_ch
        width = c * h * w
    for hdim in list(cfg.model.hidden) + [class_count]:
        specs += [{"type": "dense", "in": width, "out": hdim}, {"type": "relu"}]
        width = hdim
    return specs[:-1]


def build_model(cfg: ExperimentConfig, train: Dataset) -> Model:
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    return init_model(layer_specs(cfg, train.inputs.shape[1], train.class_count), train.class_count, rng)


def metrics_header(cfg: ExperimentConfig) -> list[str]:
    return (
        ["epoch", "lr", "train_nat_err", "train_rob_err", "test_nat_err"]
        + [f"test_rob_err_{name}" for name, _ in cfg.evals]
        + ["kappa_mean", "kappa_median", "flatness", "wall_time_s"]
    )


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    out = Path(out_dir or cfg.out)
    try:
        return _run(cfg, out)
    except OSError as exc:
        try:
            (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
        except OSError:
            pass
        raise


def _run(cfg: ExperimentConfig, out: Path) -> RunResult:
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(cfg))
    train, test = load_datasets(cfg)
    model = build_model(cfg, train)
    tcfg = cfg.trainer
    state = OptimizerState.for_model(model, lr=tcfg.schedule.initial, momentum=tcfg.momentum,
                                     weight_decay=tcfg.weight_decay)
    flat_cfg = replace(tcfg.attack, random_start=RandomStart.NONE, restarts=1)
    select = cfg.selection_attack
    history = CheckpointHistory()
    header = metrics_header(cfg)
    rows = []
    K = tcfg.attack.steps
    with (out / "metrics.csv").open("w") as fh, (out / "kappa_hist.csv").open("w") as kh:
        fh.write(",".join(header) + "\n")
        kh.write(",".join(["epoch"] + [f"k{i}" for i in range(K + 1)]) + "\n")
        for epoch in range(tcfg.epochs):
            t0 = time.perf_counter()
            stats = train_epoch(model, train, tcfg, epoch, state)
            row = {
                "epoch": epoch,
                "lr": state.lr,
                "train_nat_err": stats.nat_err,
                "train_rob_err": stats.rob_err,
                "kappa_mean": float(np.mean(stats.kappa)) if len(stats.kappa) else 0.0,
                "kappa_median": lower_median(stats.kappa),
            }
            evaluated = (epoch + 1) % cfg.eval_every == 0 or epoch == tcfg.epochs - 1
            if evaluated:
                row["test_nat_err"] = standard_error(model, test)
                for i, (name, acfg) in enumerate(cfg.evals):
                    rng = np.random.default_rng([cfg.seed, epoch, 1 + i])
                    row[f"test_rob_err_{name}"] = robust_error(model, test, acfg, rng)
                row["flatness"] = boundary_flatness(model, test, flat_cfg, friendly=cfg.flatness == "friendly")
                snapshot = f"checkpoints/epoch_{epoch:04d}.gair"
                save_checkpoint(model, state, out / snapshot, epoch, {"seed": cfg.seed, "epoch": epoch})
                history.add(epoch, snapshot, row[f"test_rob_err_{select}"])
            row["wall_time_s"] = time.perf_counter() - t0 if cfg.wall_clock else 0.0
            rows.append(row)
            fh.write(",".join(_fmt(row[k]) if k in row else "nan" for k in header) + "\n")
            fh.flush()
            hist = np.bincount(stats.kappa, minlength=K + 1)
            kh.write(",".join(str(int(v)) for v in [epoch, *hist]) + "\n")
            log.info("epoch %d lr %.4g rob_err %.4f kappa_median %d", epoch, state.lr, stats.rob_err,
                     row["kappa_median"])
    summary = select_checkpoint(history)
    summary["selection_attack"] = select
    summary["seed"] = cfg.seed
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunResult(out, rows, summary, model)
