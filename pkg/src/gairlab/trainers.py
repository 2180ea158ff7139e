"""Epoch loops for geometry-aware reweighted AT / FAT, TRADES and MART."""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field, replace

import numpy as np

from gairlab.attacks import AttackConfig, ga_pgd, ga_pgd_early_stopped, ga_pgd_kl
from gairlab.data import Dataset, batches
from gairlab.losses import (
    LossKind,
    cross_entropy,
    kl_divergence,
    kl_grad_reference,
    loss_grad,
    margin_term,
    softmax,
)
from gairlab.nn import Model, param_gradients
from gairlab.optim import LrSchedule, OptimizerState, lr_at, sgd_step
from gairlab.reweight import WeightScheme, effective_scheme, geometry_weight, normalize_weights


class TrainerKind(enum.Enum):
    GAIRAT = "gairat"
    GAIR_TRADES = "gair_trades"
    GAIR_MART = "gair_mart"


class MartVariant(enum.Enum):
    MART = "mart"
    GAIR_MARGIN = "gair_margin"
    GAIR_KL = "gair_kl"


@dataclass(frozen=True)
class TrainerConfig:
    kind: TrainerKind = TrainerKind.GAIRAT
    attack: AttackConfig = field(default_factory=AttackConfig)
    scheme: WeightScheme = field(default_factory=WeightScheme)
    beta: float = 6.0
    epochs: int = 10
    batch_size: int = 64
    schedule: LrSchedule = field(default_factory=LrSchedule)
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    # early-stopped (friendly) attack for GAIRAT; with a constant scheme this is FAT
    friendly: bool = False
    tau_schedule: tuple[tuple[int, int], ...] = ()
    mart_variant: MartVariant = MartVariant.GAIR_MARGIN

    def __post_init__(self):
        if self.kind in (TrainerKind.GAIR_TRADES, TrainerKind.GAIR_MART) and not self.beta > 0:
            raise ValueError("beta must be > 0 for TRADES/MART trainers")
        epochs = [e for e, _ in self.tau_schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError(f"tau_schedule epochs must be strictly increasing: {epochs}")
        if any(not 0 <= t <= self.attack.steps for _, t in self.tau_schedule):
            raise ValueError("scheduled tau must lie in [0, steps]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class EpochStats:
    mean_loss: float
    kappa: np.ndarray
    nat_err: float
    rob_err: float
    wall_time: float


def tau_at(cfg: TrainerConfig, epoch: int) -> int:
    """Last scheduled tau with epoch <= ``epoch``; the attack's own tau before that."""
    tau = cfg.attack.tau
    for at, value in cfg.tau_schedule:
        if at <= epoch:
            tau = value
    return tau


def batch_weights(kappa, epoch: int, cfg: TrainerConfig) -> np.ndarray:
    scheme = effective_scheme(epoch, cfg.scheme)
    raw = np.atleast_1d(geometry_weight(kappa, cfg.attack.steps, scheme))
    return normalize_weights(raw).normalized


def _optimizer_ready(model, cfg, state, epoch):
    if state is None:
        state = OptimizerState.for_model(model, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    state.lr = lr_at(cfg.schedule, epoch)
    return state


def _rng(cfg, epoch, rng):
    return np.random.default_rng([cfg.seed, epoch]) if rng is None else rng


def gairat_epoch(model: Model, data: Dataset, cfg: TrainerConfig, epoch: int,
                 state: OptimizerState | None = None, rng=None) -> EpochStats:
    """One epoch of GAIRAT (or GAIR-FAT when ``cfg.friendly``).

    Each mini-batch is attacked once; the same call yields the adversarial
    rows and their geometry values, which set the per-example loss weights.
    """
    t0 = time.perf_counter()
    state = _optimizer_ready(model, cfg, state, epoch)
    rng = _rng(cfg, epoch, rng)
    tau = tau_at(cfg, epoch)
    kappas, losses, nat_wrong, rob_wrong = [], [], 0, 0
    for idx in batches(data, cfg.batch_size, cfg.seed, epoch):
        x, y = data.inputs[idx], data.labels[idx]
        if cfg.friendly:
            res = ga_pgd_early_stopped(model, x, y, cfg.attack, rng, tau=tau)
        else:
            res = ga_pgd(model, x, y, cfg.attack, rng)
        nat_wrong += int(np.sum(np.argmax(model.forward(x), axis=1) != y))
        rob_wrong += int(res.fooled.sum())
        w = batch_weights(res.kappa, epoch, cfg)
        losses.append(cross_entropy(model.forward(res.adversarial), y))
        grads = param_gradients(model, res.adversarial, y, LossKind.CROSS_ENTROPY, w)
        sgd_step(model, grads, state)
        kappas.append(res.kappa)
    return _stats(kappas, losses, nat_wrong, rob_wrong, len(data), t0)


def trades_objective(logits_nat, logits_adv, y, omega, beta) -> np.ndarray:
    """Per-example omega * CE(f(x), y) + beta * KL(f(x) || f(x_adv))."""
    return np.asarray(omega) * cross_entropy(logits_nat, y) + beta * kl_divergence(logits_adv, logits_nat)


def trades_batch_grads(model, x, x_adv, y, w, beta):
    """Natural logits, per-example objective shares and parameter gradients of
    sum_i w_i CE(f(x_i), y_i) + (beta/m) sum_i KL(f(x_i) || f(x_adv_i))."""
    m = len(y)
    z_nat, c_nat = model.forward_with_cache(x)
    z_adv, c_adv = model.forward_with_cache(x_adv)
    objective = w * cross_entropy(z_nat, y) + (beta / m) * kl_divergence(z_adv, z_nat)
    g_nat = w[:, None] * loss_grad(z_nat, y, LossKind.CROSS_ENTROPY)
    g_nat += (beta / m) * kl_grad_reference(z_adv, z_nat)
    g_adv = (beta / m) * loss_grad(z_adv, z_nat, LossKind.KL_DIVERGENCE)
    grads_nat, _ = model.backward(c_nat, g_nat)
    grads_adv, _ = model.backward(c_adv, g_adv)
    return z_nat, objective, [a + b for a, b in zip(grads_nat, grads_adv)]


def gair_trades_epoch(model: Model, data: Dataset, cfg: TrainerConfig, epoch: int,
                      state: OptimizerState | None = None, rng=None) -> EpochStats:
    """GAIR-TRADES: normalised weights on the natural CE term, batch-mean KL term."""
    t0 = time.perf_counter()
    state = _optimizer_ready(model, cfg, state, epoch)
    rng = _rng(cfg, epoch, rng)
    kappas, losses, nat_wrong, rob_wrong = [], [], 0, 0
    for idx in batches(data, cfg.batch_size, cfg.seed, epoch):
        x, y = data.inputs[idx], data.labels[idx]
        m = len(y)
        res = ga_pgd_kl(model, x, y, cfg.attack, rng)
        w = batch_weights(res.kappa, epoch, cfg)
        z_nat, objective, grads = trades_batch_grads(model, x, res.adversarial, y, w, cfg.beta)
        nat_wrong += int(np.sum(np.argmax(z_nat, axis=1) != y))
        rob_wrong += int(res.fooled.sum())
        losses.append(objective * m)
        sgd_step(model, grads, state)
        kappas.append(res.kappa)
    return _stats(kappas, losses, nat_wrong, rob_wrong, len(data), t0)


def mart_objective(ce_adv, margin_adv, kl, p_nat_y, beta, variant: MartVariant, omega=1.0):
    """Combine MART loss components.

    ``margin_adv`` is -log(1 - max_{k!=y} p_k(x_adv)); ``ce_adv`` is -log p_y(x_adv).
    """
    if variant is MartVariant.MART:
        return ce_adv + margin_adv + beta * kl * (1.0 - p_nat_y)
    if variant is MartVariant.GAIR_MARGIN:
        return omega * ce_adv + margin_adv + beta * kl * (1.0 - p_nat_y)
    if variant is MartVariant.GAIR_KL:
        return ce_adv + margin_adv + beta * kl * omega
    raise ValueError(f"unknown MART variant {variant!r}")


def mart_loss(logits_adv, logits_nat, y, beta, variant: MartVariant = MartVariant.MART, omega=1.0):
    """Per-example MART / GAIR-MART loss from logits."""
    z_adv = np.atleast_2d(np.asarray(logits_adv, dtype=np.float64))
    z_nat = np.atleast_2d(np.asarray(logits_nat, dtype=np.float64))
    y = np.atleast_1d(y)
    omega = np.asarray(omega, dtype=np.float64)
    if variant is not MartVariant.MART and (np.any(omega < 0) or np.any(omega > 1)):
        raise ValueError("omega must lie in [0, 1]")
    ce = cross_entropy(z_adv, y)
    margin = margin_term(z_adv, y)
    kl = kl_divergence(z_adv, z_nat)
    p_y = softmax(z_nat)[np.arange(len(y)), y]
    return mart_objective(ce, margin, kl, p_y, beta, variant, omega)


def mart_loss_grads(logits_adv, logits_nat, y, beta, variant: MartVariant = MartVariant.MART, omega=1.0):
    """Row-wise gradients of ``mart_loss`` with respect to (adv logits, nat logits)."""
    z_adv = np.atleast_2d(np.asarray(logits_adv, dtype=np.float64))
    z_nat = np.atleast_2d(np.asarray(logits_nat, dtype=np.float64))
    y = np.atleast_1d(y)
    rows = np.arange(len(y))
    omega = np.broadcast_to(np.asarray(omega, dtype=np.float64), y.shape)[:, None]
    g_ce = loss_grad(z_adv, y, LossKind.CROSS_ENTROPY)
    g_margin = loss_grad(z_adv, y, LossKind.MART_MARGIN) - g_ce
    kl = kl_divergence(z_adv, z_nat)[:, None]
    g_kl_adv = loss_grad(z_adv, z_nat, LossKind.KL_DIVERGENCE)
    g_kl_nat = kl_grad_reference(z_adv, z_nat)
    p = softmax(z_nat)
    p_y = p[rows, y][:, None]
    # d(1 - p_y)/dz = p_y * (p - e_y)
    g_slack = p_y * p
    g_slack[rows, y] -= p_y[:, 0]
    if variant is MartVariant.GAIR_KL:
        g_adv = g_ce + g_margin + beta * omega * g_kl_adv
        g_nat = beta * omega * g_kl_nat
    else:
        ce_coef = omega if variant is MartVariant.GAIR_MARGIN else 1.0
        g_adv = ce_coef * g_ce + g_margin + beta * (1.0 - p_y) * g_kl_adv
        g_nat = beta * ((1.0 - p_y) * g_kl_nat + kl * g_slack)
    return g_adv, g_nat


def mart_batch_grads(model, x, x_adv, y, beta, variant, omega):
    """Natural logits, per-example MART losses and gradients of their batch mean."""
    m = len(y)
    z_nat, c_nat = model.forward_with_cache(x)
    z_adv, c_adv = model.forward_with_cache(x_adv)
    losses = mart_loss(z_adv, z_nat, y, beta, variant, omega)
    g_adv, g_nat = mart_loss_grads(z_adv, z_nat, y, beta, variant, omega)
    grads_adv, _ = model.backward(c_adv, g_adv / m)
    grads_nat, _ = model.backward(c_nat, g_nat / m)
    return z_nat, losses, [a + b for a, b in zip(grads_adv, grads_nat)]


def gair_mart_epoch(model: Model, data: Dataset, cfg: TrainerConfig, epoch: int,
                    state: OptimizerState | None = None, rng=None) -> EpochStats:
    """GAIR-MART: CE-guided GA-PGD, raw omega in [0,1], batch-mean MART loss."""
    t0 = time.perf_counter()
    state = _optimizer_ready(model, cfg, state, epoch)
    rng = _rng(cfg, epoch, rng)
    attack = cfg.attack if cfg.attack.loss is LossKind.CROSS_ENTROPY else _with_ce(cfg.attack)
    scheme = effective_scheme(epoch, cfg.scheme)
    kappas, losses, nat_wrong, rob_wrong = [], [], 0, 0
    for idx in batches(data, cfg.batch_size, cfg.seed, epoch):
        x, y = data.inputs[idx], data.labels[idx]
        res = ga_pgd(model, x, y, attack, rng)
        omega = np.atleast_1d(geometry_weight(res.kappa, attack.steps, scheme))
        z_nat, losses_b, grads = mart_batch_grads(model, x, res.adversarial, y, cfg.beta, cfg.mart_variant, omega)
        nat_wrong += int(np.sum(np.argmax(z_nat, axis=1) != y))
        rob_wrong += int(res.fooled.sum())
        losses.append(losses_b)
        sgd_step(model, grads, state)
        kappas.append(res.kappa)
    return _stats(kappas, losses, nat_wrong, rob_wrong, len(data), t0)


def _with_ce(attack: AttackConfig) -> AttackConfig:
    return replace(attack, loss=LossKind.CROSS_ENTROPY)


def _stats(kappas, losses, nat_wrong, rob_wrong, n, t0) -> EpochStats:
    return EpochStats(
        mean_loss=float(np.concatenate(losses).mean()) if losses else 0.0,
        kappa=np.concatenate(kappas) if kappas else np.zeros(0, dtype=np.int64),
        nat_err=nat_wrong / n if n else 0.0,
        rob_err=rob_wrong / n if n else 0.0,
        wall_time=time.perf_counter() - t0,
    )


EPOCH_FUNCTIONS = {
    TrainerKind.GAIRAT: gairat_epoch,
    TrainerKind.GAIR_TRADES: gair_trades_epoch,
    TrainerKind.GAIR_MART: gair_mart_epoch,
}


def train_epoch(model, data, cfg: TrainerConfig, epoch: int, state=None, rng=None) -> EpochStats:
    return EPOCH_FUNCTIONS[cfg.kind](model, data, cfg, epoch, state, rng)
