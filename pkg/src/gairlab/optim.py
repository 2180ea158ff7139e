"""SGD with classical momentum and a piecewise-constant learning rate."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    buffers: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_model(cls, model, **kwargs) -> "OptimizerState":
        return cls(buffers=[np.zeros_like(p) for p in model.params], **kwargs)


@dataclass(frozen=True)
class LrSchedule:
    initial: float = 0.1
    milestones: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        epochs = [e for e, _ in self.milestones]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError(f"milestone epochs must be strictly increasing: {epochs}")
        if any(d <= 1 for _, d in self.milestones):
            raise ValueError("milestone divisors must be > 1")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    rate = schedule.initial
    for at, divisor in schedule.milestones:
        if epoch >= at:
            rate /= divisor
    return rate


def sgd_step(model, grads, state: OptimizerState) -> None:
    """v <- mu*v + (g + wd*theta); theta <- theta - lr*v, in place."""
    params = model.params
    if not state.buffers:
        state.buffers = [np.zeros_like(p) for p in params]
    if len(grads) != len(params):
        raise ValueError(f"got {len(grads)} gradients for {len(params)} parameters")
    for p, g, v in zip(params, grads, state.buffers):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        v *= state.momentum
        v += g + state.weight_decay * p
        p -= state.lr * v
