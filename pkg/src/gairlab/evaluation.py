"""Standard/robust error, geometry-value profiles, loss flatness, checkpoint choice."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from gairlab.attacks import AttackConfig, ga_pgd, ga_pgd_early_stopped, pgd, pgd_multi_restart
from gairlab.data import Dataset
from gairlab.losses import LossKind
from gairlab.nn import input_gradient


@dataclass
class RobustnessReport:
    n: int
    standard_error: float
    robust_error: dict[str, float] = field(default_factory=dict)


@dataclass
class GeometryProfile:
    kappa: np.ndarray
    mean: float
    median: int
    histogram: np.ndarray


@dataclass
class CheckpointHistory:
    entries: list[tuple[int, str, float]] = field(default_factory=list)

    def add(self, epoch: int, snapshot: str, robust_error: float):
        self.entries.append((epoch, snapshot, robust_error))


def standard_error(model, dataset: Dataset) -> float:
    if len(dataset) == 0:
        return 0.0
    wrong = np.argmax(model.forward(dataset.inputs), axis=1) != dataset.labels
    return float(wrong.mean())


def attacked_wrong(model, dataset: Dataset, cfg: AttackConfig, rng=None) -> np.ndarray:
    """Per-example flag: the natural point or the attack's output is misclassified.

    The natural point lies in every eps-ball, so it always counts as a candidate.
    """
    x, y = dataset.inputs, dataset.labels
    nat_wrong = np.argmax(model.forward(x), axis=1) != y
    if cfg.restarts > 1:
        res = pgd_multi_restart(model, x, y, cfg, rng)
    else:
        res = pgd(model, x, y, cfg, rng)
    return nat_wrong | res.fooled


def robust_error(model, dataset: Dataset, cfg: AttackConfig, rng=None) -> float:
    if len(dataset) == 0:
        return 0.0
    if rng is None:
        rng = np.random.default_rng(0)
    return float(attacked_wrong(model, dataset, cfg, rng).mean())


def lower_median(values) -> int:
    """Lower middle element of the sorted values."""
    ordered = sorted(int(v) for v in values)
    if not ordered:
        return 0
    return ordered[(len(ordered) - 1) // 2]


def profile_from_kappa(kappa, K: int) -> GeometryProfile:
    kappa = np.asarray(kappa, dtype=np.int64)
    mean = math.fsum(kappa.tolist()) / len(kappa) if len(kappa) else 0.0
    return GeometryProfile(kappa, mean, lower_median(kappa), np.bincount(kappa, minlength=K + 1))


def geometry_profile(model, dataset: Dataset, cfg: AttackConfig, rng=None) -> GeometryProfile:
    res = ga_pgd(model, dataset.inputs, dataset.labels, cfg, rng)
    return profile_from_kappa(res.kappa, cfg.steps)


def boundary_flatness(model, dataset: Dataset, cfg: AttackConfig, friendly: bool = True, rng=None) -> float:
    """Mean L2 norm of the CE input-gradient at adversarial points.

    ``friendly`` uses early-stopped PGD with tau=0 (points near the boundary);
    otherwise the K-step most adversarial points.
    """
    if len(dataset) == 0:
        return 0.0
    x, y = dataset.inputs, dataset.labels
    if friendly:
        res = ga_pgd_early_stopped(model, x, y, replace(cfg, tau=0), rng, tau=0)
    else:
        res = pgd(model, x, y, cfg, rng)
    g = input_gradient(model, res.adversarial, y, LossKind.CROSS_ENTROPY)
    norms = np.sqrt((g * g).sum(axis=1))
    return math.fsum(norms.tolist()) / len(norms)


def select_checkpoint(history: CheckpointHistory) -> dict:
    """Best (lowest robust error, earliest on ties) and last epochs."""
    if not history.entries:
        raise ValueError("checkpoint history is empty")
    best = min(history.entries, key=lambda e: (e[2], e[0]))
    last = max(history.entries, key=lambda e: e[0])
    return {
        "best_epoch": best[0],
        "best_snapshot": best[1],
        "best_robust_error": best[2],
        "last_epoch": last[0],
        "last_snapshot": last[1],
        "last_robust_error": last[2],
    }
