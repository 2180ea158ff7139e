"""L-infinity attacks: PGD, geometry-aware PGD that reports kappa, early-stopped
PGD-K-tau, KL-guided PGD for TRADES, and multi-restart PGD.

All attacks work on a batch (rows are independent examples) and return one
AttackResult whose arrays are indexed like the input rows.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from gairlab.losses import LossKind, loss_grad, per_example_loss


class RandomStart(enum.Enum):
    NONE = "none"
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.031
    alpha: float = 0.007
    steps: int = 10
    tau: int = 0
    restarts: int = 1
    random_start: RandomStart = RandomStart.NONE
    xi: float = 0.001
    loss: LossKind = LossKind.CROSS_ENTROPY
    clamp_box: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not 0 <= self.tau <= self.steps:
            raise ValueError(f"tau must lie in [0, steps], got {self.tau}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.xi < 0:
            raise ValueError("xi must be >= 0")
        if self.clamp_box is not None and not self.clamp_box[0] < self.clamp_box[1]:
            raise ValueError(f"bad clamp box {self.clamp_box}")


@dataclass
class AttackResult:
    adversarial: np.ndarray
    kappa: np.ndarray
    fooled: np.ndarray
    # gradient steps actually applied to each example
    iterations: np.ndarray = field(default=None)


def project_linf(candidate, anchor, eps, clamp_box=None) -> np.ndarray:
    """Clip into the eps-ball around ``anchor``, then into ``clamp_box``."""
    candidate = np.asarray(candidate, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    if candidate.shape != anchor.shape:
        raise ValueError(f"shape mismatch {candidate.shape} vs {anchor.shape}")
    out = np.clip(candidate, anchor - eps, anchor + eps)
    if clamp_box is not None:
        out = np.clip(out, clamp_box[0], clamp_box[1])
    return out


def _grad_and_logits(model, x, target, kind):
    logits, caches = model.forward_with_cache(x)
    _, gx = model.backward(caches, loss_grad(logits, target, kind))
    return gx, logits


def _step(x_adv, grad, x_nat, cfg):
    return project_linf(x_adv + cfg.alpha * np.sign(grad), x_nat, cfg.epsilon, cfg.clamp_box)


def _prepare(x, y=None):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if y is None:
        return x, None
    return x, np.atleast_1d(np.asarray(y))


def random_start(x, cfg: AttackConfig, rng: np.random.Generator | None) -> np.ndarray:
    if cfg.random_start is RandomStart.NONE:
        return x.copy()
    if rng is None:
        raise ValueError("a random start needs an rng")
    if cfg.random_start is RandomStart.UNIFORM:
        noise = rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape)
    else:
        noise = cfg.xi * rng.standard_normal(size=x.shape)
    return project_linf(x + noise, x, cfg.epsilon, cfg.clamp_box)


def pgd(model, x, y, cfg: AttackConfig, rng=None) -> AttackResult:
    """Fixed-K PGD returning the final iterate."""
    x, y = _prepare(x, y)
    x_adv = random_start(x, cfg, rng)
    for _ in range(cfg.steps):
        grad, _ = _grad_and_logits(model, x_adv, y, cfg.loss)
        x_adv = _step(x_adv, grad, x, cfg)
    fooled = np.argmax(model.forward(x_adv), axis=1) != y
    n = x.shape[0]
    return AttackResult(x_adv, np.zeros(n, dtype=np.int64), fooled, np.full(n, cfg.steps))


def ga_pgd(model, x, y, cfg: AttackConfig, rng=None) -> AttackResult:
    """Geometry-aware PGD: kappa counts the checks at which the iterate is still
    classified as ``y`` before each of the K steps."""
    x, y = _prepare(x, y)
    x_adv = random_start(x, cfg, rng)
    kappa = np.zeros(x.shape[0], dtype=np.int64)
    for _ in range(cfg.steps):
        grad, logits = _grad_and_logits(model, x_adv, y, cfg.loss)
        kappa += np.argmax(logits, axis=1) == y
        x_adv = _step(x_adv, grad, x, cfg)
    fooled = np.argmax(model.forward(x_adv), axis=1) != y
    return AttackResult(x_adv, kappa, fooled, np.full(x.shape[0], cfg.steps))


def ga_pgd_early_stopped(model, x, y, cfg: AttackConfig, rng=None, tau: int | None = None) -> AttackResult:
    """Early-stopped PGD-K-tau with geometry value.

    Once the iterate is misclassified it may take ``tau`` further steps; the
    check that finds it misclassified with no budget left stops before any
    perturbation.
    """
    x, y = _prepare(x, y)
    budget_init = cfg.tau if tau is None else tau
    if not 0 <= budget_init <= cfg.steps:
        raise ValueError(f"tau must lie in [0, {cfg.steps}], got {budget_init}")
    n = x.shape[0]
    x_adv = random_start(x, cfg, rng)
    kappa = np.zeros(n, dtype=np.int64)
    budget = np.full(n, budget_init, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    iterations = np.zeros(n, dtype=np.int64)
    for _ in range(cfg.steps):
        if not active.any():
            break
        grad, logits = _grad_and_logits(model, x_adv, y, cfg.loss)
        wrong = np.argmax(logits, axis=1) != y
        stop = active & wrong & (budget == 0)
        active &= ~stop
        slide = active & wrong
        budget[slide] -= 1
        kappa[active & ~wrong] += 1
        x_adv[active] = _step(x_adv, grad, x, cfg)[active]
        iterations[active] += 1
    fooled = np.argmax(model.forward(x_adv), axis=1) != y
    return AttackResult(x_adv, kappa, fooled, iterations)


def ga_pgd_kl(model, x, y, cfg: AttackConfig, rng=None) -> AttackResult:
    """Geometry-aware PGD for TRADES: ascend KL(f(x) || f(x_adv)) from a
    Gaussian start of scale ``xi``; kappa counted against the label ``y``."""
    x, y = _prepare(x, y)
    ref = model.forward(x)
    if cfg.xi > 0:
        if rng is None:
            raise ValueError("a Gaussian start needs an rng")
        x_adv = x + cfg.xi * rng.standard_normal(size=x.shape)
    else:
        x_adv = x.copy()
    kappa = np.zeros(x.shape[0], dtype=np.int64)
    for _ in range(cfg.steps):
        grad, logits = _grad_and_logits(model, x_adv, ref, LossKind.KL_DIVERGENCE)
        kappa += np.argmax(logits, axis=1) == y
        x_adv = _step(x_adv, grad, x, cfg)
    fooled = np.argmax(model.forward(x_adv), axis=1) != y
    return AttackResult(x_adv, kappa, fooled, np.full(x.shape[0], cfg.steps))


def pgd_multi_restart(model, x, y, cfg: AttackConfig, rng=None) -> AttackResult:
    """PGD+ style evaluation: ``cfg.restarts`` independent PGD runs.

    Per example, the first restart that fools the model wins; otherwise the
    final iterate with the largest loss is kept.
    """
    x, y = _prepare(x, y)
    n = x.shape[0]
    best = None
    best_loss = np.full(n, -np.inf)
    fooled = np.zeros(n, dtype=bool)
    iterations = np.zeros(n, dtype=np.int64)
    for _ in range(cfg.restarts):
        res = pgd(model, x, y, cfg, rng)
        iterations += res.iterations
        loss = per_example_loss(model.forward(res.adversarial), y, LossKind.CROSS_ENTROPY)
        if best is None:
            best = res.adversarial.copy()
        take = ~fooled & (res.fooled | (loss > best_loss))
        best[take] = res.adversarial[take]
        best_loss[take] = loss[take]
        fooled |= res.fooled
    return AttackResult(best, np.zeros(n, dtype=np.int64), fooled, iterations)
