"""Softmax-based losses on logits and their gradients with respect to logits."""
from __future__ import annotations

import enum

import numpy as np


class LossKind(enum.Enum):
    CROSS_ENTROPY = "ce"
    KL_DIVERGENCE = "kl"
    MART_MARGIN = "margin"


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(z)
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(z)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _labels(logits, y):
    y = np.atleast_1d(np.asarray(y))
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {y.dtype}")
    if y.shape != (logits.shape[0],):
        raise ValueError(f"expected {logits.shape[0]} labels, got {y.shape}")
    if np.any(y < 0) or np.any(y >= logits.shape[1]):
        raise ValueError(f"label out of range [0, {logits.shape[1]})")
    return y


def _reference(logits, ref):
    ref = np.atleast_2d(np.asarray(ref, dtype=np.float64))
    if ref.shape != logits.shape:
        raise ValueError(f"reference logits {ref.shape} do not match {logits.shape}")
    return ref


def runner_up(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Index of the most probable class other than ``y`` (lowest index on ties)."""
    masked = p.copy()
    masked[np.arange(len(y)), y] = -np.inf
    return np.argmax(masked, axis=1)


def _log_one_minus(z, j):
    # log(1 - p_j) = logsumexp(z without j) - logsumexp(z)
    rows = np.arange(z.shape[0])
    rest = z.copy()
    rest[rows, j] = -np.inf
    m = rest.max(axis=1, keepdims=True)
    lse_rest = (m + np.log(np.exp(rest - m).sum(axis=1, keepdims=True)))[:, 0]
    mz = z.max(axis=1, keepdims=True)
    lse = (mz + np.log(np.exp(z - mz).sum(axis=1, keepdims=True)))[:, 0]
    return lse_rest - lse, rest


def cross_entropy(logits, y) -> np.ndarray:
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = _labels(z, y)
    return -log_softmax(z)[np.arange(len(y)), y]


def kl_divergence(logits, ref_logits) -> np.ndarray:
    """Per-example KL(softmax(ref) || softmax(logits))."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    r = _reference(z, ref_logits)
    log_p, log_q = log_softmax(r), log_softmax(z)
    return np.maximum((np.exp(log_p) * (log_p - log_q)).sum(axis=1), 0.0)


def margin_term(logits, y) -> np.ndarray:
    """-log(1 - max_{k != y} p_k), per example."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = _labels(z, y)
    log_rest, _ = _log_one_minus(z, runner_up(z, y))
    return -log_rest


def margin_loss(logits, y) -> np.ndarray:
    """-log p_y - log(1 - max_{k != y} p_k), per example."""
    return cross_entropy(logits, y) + margin_term(logits, y)


def per_example_loss(logits, target, kind: LossKind) -> np.ndarray:
    if kind is LossKind.CROSS_ENTROPY:
        return cross_entropy(logits, target)
    if kind is LossKind.KL_DIVERGENCE:
        return kl_divergence(logits, target)
    if kind is LossKind.MART_MARGIN:
        return margin_loss(logits, target)
    raise ValueError(f"unknown loss kind {kind!r}")


def loss_value(logits, target, kind: LossKind) -> float:
    """Mean loss over the rows of ``logits``."""
    return float(per_example_loss(logits, target, kind).mean())


def loss_grad(logits, target, kind: LossKind) -> np.ndarray:
    """Row i holds d loss_i / d logits_i."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if kind is LossKind.KL_DIVERGENCE:
        r = _reference(z, target)
        return softmax(z) - softmax(r)
    y = _labels(z, target)
    rows = np.arange(len(y))
    g = softmax(z)
    g[rows, y] -= 1.0
    if kind is LossKind.MART_MARGIN:
        j = runner_up(z, y)
        _, rest = _log_one_minus(z, j)
        # d/dz [-log(1 - p_j)] = softmax(z) - softmax(z with class j removed)
        g += softmax(z) - softmax(rest)
    elif kind is not LossKind.CROSS_ENTROPY:
        raise ValueError(f"unknown loss kind {kind!r}")
    return g


def kl_grad_reference(logits, ref_logits) -> np.ndarray:
    """d KL(softmax(ref) || softmax(logits)) / d ref, per row."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    r = _reference(z, ref_logits)
    log_p = log_softmax(r)
    p = np.exp(log_p)
    g = log_p - log_softmax(z)
    return p * (g - (p * g).sum(axis=1, keepdims=True))
