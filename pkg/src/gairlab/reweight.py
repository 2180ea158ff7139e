"""Geometry-value to loss-weight maps, burn-in gating, per-batch normalisation."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np


class Family(enum.Enum):
    CONSTANT = "constant"
    TANH = "tanh"
    LINEAR = "linear"
    SIGMOID = "sigmoid"


@dataclass(frozen=True)
class WeightScheme:
    family: Family = Family.TANH
    lam: float = 0.0
    burn_in_epochs: int = 0

    def __post_init__(self):
        if self.burn_in_epochs < 0:
            raise ValueError("burn_in_epochs must be >= 0")


@dataclass(frozen=True)
class BatchWeights:
    raw: np.ndarray
    normalized: np.ndarray


def geometry_weight(kappa, K: int, scheme: WeightScheme):
    """Weight in [0, 1], non-increasing in kappa. Accepts scalars or arrays."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    k = np.asarray(kappa)
    if np.any(k < 0) or np.any(k > K):
        raise ValueError(f"kappa must lie in [0, {K}]")
    k = k.astype(np.float64)
    fam = scheme.family
    if fam is Family.CONSTANT:
        w = np.ones_like(k)
    elif fam is Family.LINEAR:
        w = 1.0 - k / (K + 1)
    else:
        arg = scheme.lam + 5.0 * (1.0 - 2.0 * k / K)
        if fam is Family.TANH:
            w = (1.0 + np.tanh(arg)) / 2.0
        else:
            # 1/(1+e^-a) written via tanh to stay finite for large |a|
            w = 0.5 * (1.0 + np.tanh(arg / 2.0))
    return float(w) if w.ndim == 0 else w


def normalize_weights(raw) -> BatchWeights:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or raw.size == 0:
        raise ValueError("need a non-empty 1-D list of weights")
    if np.any(raw < 0):
        raise ValueError("weights must be nonnegative")
    total = math.fsum(raw)
    if total == 0.0:
        return BatchWeights(raw, np.full(raw.size, 1.0 / raw.size))
    return BatchWeights(raw, raw / total)


def effective_scheme(epoch: int, scheme: WeightScheme) -> WeightScheme:
    """Constant weights during burn-in; the scheme itself afterwards."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < scheme.burn_in_epochs:
        return replace(scheme, family=Family.CONSTANT)
    return scheme
