"""Toy-scale studies shared by ``scripts/`` and the acceptance suite."""
from __future__ import annotations

import tempfile
from dataclasses import dataclass

import numpy as np

from gairlab.config import parse_config
from gairlab.evaluation import lower_median
from gairlab.experiment import run_experiment

BLOBS_TEMPLATE = """
[run]
seed = {seed}
[data]
kind = blobs
n_per_class = {n}
test_n_per_class = {test_n}
means = -1, 0; 1, 0
sigma = {sigma}
[model]
hidden = 32, 32
[trainer]
kind = gairat
epochs = {epochs}
batch_size = 32
lr = 0.05
weight_decay = {wd}
milestones = {m1}:10, {m2}:10
[attack]
epsilon = {eps}
alpha = {alpha}
steps = 10
[scheme]
family = {family}
{scheme_extra}
[eval.pgd20]
steps = 20
"""


def blobs_config(seed, family, *, epochs=30, sigma=0.7, eps=0.5, alpha=None, n=200, test_n=500,
                 wd=5e-4, milestones=None, scheme_extra=""):
    m1, m2 = milestones or (epochs // 2, 3 * epochs // 4)
    text = BLOBS_TEMPLATE.format(
        seed=seed, n=n, test_n=test_n, sigma=sigma, epochs=epochs, wd=wd, m1=m1, m2=m2,
        eps=eps, alpha=eps / 4 if alpha is None else alpha, family=family, scheme_extra=scheme_extra,
    )
    return parse_config(text)


def _run(cfg):
    with tempfile.TemporaryDirectory() as d:
        return run_experiment(cfg, d)


@dataclass
class ComparisonResult:
    at_best: list[float]
    gairat_best: list[float]

    @property
    def at_median(self) -> float:
        return float(np.median(self.at_best))

    @property
    def gairat_median(self) -> float:
        return float(np.median(self.gairat_best))


def compare_at_gairat(seeds=range(5), **kw) -> ComparisonResult:
    """Best-checkpoint PGD-20 robust test error of AT (constant weights) and
    GAIRAT (tanh, lambda 0, burn-in T/2) under identical attacks and seeds."""
    at, gair = [], []
    for seed in seeds:
        at.append(_run(blobs_config(seed, "constant", **kw)).summary["best_robust_error"])
        gair.append(_run(blobs_config(seed, "tanh", **kw)).summary["best_robust_error"])
    return ComparisonResult(at, gair)


@dataclass
class KappaGrowth:
    pre_decay: list[int]
    final: list[int]
    rows: list[list[dict]]
    hists: list[list[np.ndarray]]

    @property
    def pre_median(self) -> float:
        return float(np.median(self.pre_decay))

    @property
    def final_median(self) -> float:
        return float(np.median(self.final))


KAPPA_GROWTH_SETTINGS = dict(epochs=30, sigma=0.7, eps=2.0, alpha=0.2, wd=0.0, milestones=(10, 20))


def kappa_growth(seeds=range(5), window=5, **overrides) -> KappaGrowth:
    """Median geometry value of the training set just before the first
    learning-rate decay (pooled over ``window`` epochs) versus the last epoch,
    under plain AT with the two-milestone schedule."""
    settings = {**KAPPA_GROWTH_SETTINGS, **overrides}
    first_decay = settings["milestones"][0]
    pre, final, all_rows, all_hists = [], [], [], []
    for seed in seeds:
        cfg = blobs_config(seed, "constant", **settings)
        rows, hists = _run_with_kappa(cfg)
        pooled = np.sum([hists[e] for e in range(first_decay - window, first_decay)], axis=0)
        pre.append(lower_median(np.repeat(np.arange(len(pooled)), pooled)))
        final.append(rows[-1]["kappa_median"])
        all_rows.append(rows)
        all_hists.append(hists)
    return KappaGrowth(pre, final, all_rows, all_hists)


def _run_with_kappa(cfg):
    with tempfile.TemporaryDirectory() as d:
        res = run_experiment(cfg, d)
        hists = read_kappa_hist(f"{d}/kappa_hist.csv")
    return res.rows, hists


def read_kappa_hist(path) -> list[np.ndarray]:
    lines = open(path).read().splitlines()[1:]
    return [np.array([int(v) for v in line.split(",")[1:]]) for line in lines]
