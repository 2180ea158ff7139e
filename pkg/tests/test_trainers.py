import math

import numpy as np
import pytest

import gairlab.trainers as trainers
from conftest import fd_gradient, random_mlp, rel_err
from gairlab.attacks import AttackConfig, RandomStart
from gairlab.data import batches, gen_gaussian_blobs
from gairlab.losses import cross_entropy, kl_divergence
from gairlab.nn import build_mlp, input_gradient, param_gradients
from gairlab.optim import LrSchedule, OptimizerState
from gairlab.reweight import Family, WeightScheme
from gairlab.trainers import (
    MartVariant,
    TrainerConfig,
    TrainerKind,
    batch_weights,
    mart_batch_grads,
    mart_loss,
    mart_objective,
    tau_at,
    train_epoch,
    trades_batch_grads,
    trades_objective,
)

LOG = np.log


def _blobs(seed=0, n=100):
    return gen_gaussian_blobs(seed, n, means=((-1.0, 0.0), (1.0, 0.0)), sigma=0.7)


def _model(seed=0):
    return build_mlp(2, [16, 16], 2, np.random.default_rng(seed))


class TestWeights:
    def test_tanh_pair(self):
        cfg = TrainerConfig(attack=AttackConfig(steps=10), scheme=WeightScheme(Family.TANH, 0.0))
        w = batch_weights(np.array([0, 10]), 0, cfg)
        a, b = (1 + math.tanh(5)) / 2, (1 + math.tanh(-5)) / 2
        np.testing.assert_allclose(w, [a / (a + b), b / (a + b)], atol=1e-15)
        np.testing.assert_allclose(w, [0.9999546, 0.0000454], atol=1e-7)

    def test_linear_pair(self):
        cfg = TrainerConfig(attack=AttackConfig(steps=10), scheme=WeightScheme(Family.LINEAR))
        np.testing.assert_allclose(batch_weights(np.array([0, 10]), 0, cfg), [0.9167, 0.0833], atol=5e-5)

    def test_burn_in_gives_uniform(self):
        cfg = TrainerConfig(attack=AttackConfig(steps=10), scheme=WeightScheme(Family.TANH, 0.0, burn_in_epochs=2))
        np.testing.assert_array_equal(batch_weights(np.array([0, 3, 10]), 1, cfg), 1 / 3)


class TestConfig:
    def test_tau_schedule(self):
        cfg = TrainerConfig(attack=AttackConfig(steps=10, tau=0), tau_schedule=((3, 1), (6, 2)))
        assert [tau_at(cfg, e) for e in range(8)] == [0, 0, 0, 1, 1, 1, 2, 2]

    def test_invalid(self):
        with pytest.raises(ValueError):
            TrainerConfig(kind=TrainerKind.GAIR_TRADES, beta=0.0)
        with pytest.raises(ValueError):
            TrainerConfig(tau_schedule=((3, 1), (3, 2)))
        with pytest.raises(ValueError):
            TrainerConfig(attack=AttackConfig(steps=2), tau_schedule=((0, 3),))
        with pytest.raises(ValueError):
            TrainerConfig(batch_size=0)


def reference_at(model, data, epochs, attack, lr, momentum, wd, batch_size, seed):
    """Plain AT written out directly: uniform start, K sign steps, mean CE, momentum SGD.

    Returns the parameter vector after every update.
    """
    params = [p.copy() for p in model.params]
    bufs = [np.zeros_like(p) for p in params]
    history = []
    for epoch in range(epochs):
        rng = np.random.default_rng([seed, epoch])
        for idx in batches(data, batch_size, seed, epoch):
            x, y = data.inputs[idx], data.labels[idx]
            model_view = model.copy()
            for dst, src in zip(model_view.params, params):
                dst[...] = src
            x_adv = np.clip(x + rng.uniform(-attack.epsilon, attack.epsilon, size=x.shape),
                            x - attack.epsilon, x + attack.epsilon)
            for _ in range(attack.steps):
                g = input_gradient(model_view, x_adv, y)
                x_adv = np.clip(x_adv + attack.alpha * np.sign(g), x - attack.epsilon, x + attack.epsilon)
            grads = param_gradients(model_view, x_adv, y)
            for p, b, g in zip(params, bufs, grads):
                b *= momentum
                b += g + wd * p
                p -= lr * b
            history.append(np.concatenate([p.ravel() for p in params]))
    return history


def test_constant_scheme_collapses_to_at(monkeypatch):
    data = _blobs(n=100)
    attack = AttackConfig(epsilon=0.3, alpha=0.075, steps=5, random_start=RandomStart.UNIFORM)
    cfg = TrainerConfig(attack=attack, scheme=WeightScheme(Family.CONSTANT), epochs=3, batch_size=32,
                        schedule=LrSchedule(0.05), seed=4)
    model = _model(1)
    ref = reference_at(model.copy(), data, 3, attack, 0.05, cfg.momentum, cfg.weight_decay, 32, 4)

    seen = []
    real_step = trainers.sgd_step

    def recording_step(m, grads, state):
        real_step(m, grads, state)
        seen.append(np.concatenate([p.ravel() for p in m.params]))

    monkeypatch.setattr(trainers, "sgd_step", recording_step)
    state = OptimizerState.for_model(model, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    for epoch in range(3):
        train_epoch(model, data, cfg, epoch, state)
    assert len(seen) == len(ref)
    assert max(np.max(np.abs(a - b)) for a, b in zip(seen, ref)) <= 1e-12


def test_gairat_step_uses_weighted_gradient(monkeypatch):
    data = _blobs(n=20)
    attack = AttackConfig(epsilon=0.5, alpha=0.1, steps=6)
    cfg = TrainerConfig(attack=attack, scheme=WeightScheme(Family.TANH, -1.0), epochs=1, batch_size=40)
    model = _model(2)
    before = model.copy()
    captured = {}

    def capture(m, grads, state):
        captured["grads"] = [g.copy() for g in grads]

    monkeypatch.setattr(trainers, "sgd_step", capture)
    train_epoch(model, data, cfg, 0)
    idx = batches(data, 40, cfg.seed, 0)[0]
    x, y = data.inputs[idx], data.labels[idx]
    res = trainers.ga_pgd(before, x, y, attack)
    w = batch_weights(res.kappa, 0, cfg)
    expected = [np.zeros_like(p) for p in before.params]
    for i in range(len(y)):
        gi = param_gradients(before, res.adversarial[i : i + 1], y[i : i + 1])
        for e, g in zip(expected, gi):
            e += w[i] * g
    for e, g in zip(expected, captured["grads"]):
        np.testing.assert_allclose(g, e, atol=1e-13)


class TestTradesObjective:
    def test_closed_form(self):
        p_nat, p_adv = np.array([0.8, 0.2]), np.array([0.5, 0.5])
        got = trades_objective(LOG([p_nat]), LOG([p_adv]), [0], 0.7, 6.0)[0]
        expected = 0.7 * -math.log(0.8) + 6.0 * (0.8 * math.log(0.8 / 0.5) + 0.2 * math.log(0.2 / 0.5))
        assert got == pytest.approx(expected, abs=1e-12)

    def test_identical_points_reduce_to_weighted_ce(self):
        z = np.array([[0.3, -0.2, 1.0]])
        assert trades_objective(z, z, [2], 0.4, 6.0)[0] == pytest.approx(0.4 * cross_entropy(z, [2])[0], abs=1e-15)

    def test_batch_grads_fd(self, rng):
        for _ in range(5):
            model = random_mlp(rng)
            x = rng.normal(size=(4, model.in_features))
            x_adv = x + rng.uniform(-0.2, 0.2, size=x.shape)
            y = rng.integers(0, model.class_count, 4)
            w = rng.uniform(0, 1, 4)
            w /= w.sum()
            _, _, grads = trades_batch_grads(model, x, x_adv, y, w, 6.0)

            def objective():
                zn, za = model.forward(x), model.forward(x_adv)
                return float(w @ cross_entropy(zn, y) + 6.0 / 4 * kl_divergence(za, zn).sum())

            for p, g in zip(model.params, grads):
                assert rel_err(g, fd_gradient(objective, p)) <= 1e-5


class TestMart:
    def test_worked_example_arithmetic(self):
        got = mart_objective(-math.log(0.5), -math.log(0.7), 0.1, 0.8, 6.0, MartVariant.MART)
        assert got == pytest.approx(-math.log(0.5) - math.log(0.7) + 6 * 0.1 * 0.2, abs=1e-12)
        # exact value 1.1698221...
        assert got == pytest.approx(1.16981, abs=2e-5)

    def test_loss_closed_form(self):
        p_adv = np.array([0.5, 0.3, 0.2])
        p_nat = np.array([0.8, 0.1, 0.1])
        kl = float(np.sum(p_nat * np.log(p_nat / p_adv)))
        base = -math.log(0.5) - math.log(0.7)
        got = mart_loss(LOG([p_adv]), LOG([p_nat]), [0], 6.0)[0]
        assert got == pytest.approx(base + 6.0 * kl * 0.2, abs=1e-12)
        got = mart_loss(LOG([p_adv]), LOG([p_nat]), [0], 6.0, MartVariant.GAIR_MARGIN, 0.25)[0]
        assert got == pytest.approx(0.25 * -math.log(0.5) - math.log(0.7) + 6.0 * kl * 0.2, abs=1e-12)
        got = mart_loss(LOG([p_adv]), LOG([p_nat]), [0], 6.0, MartVariant.GAIR_KL, 0.25)[0]
        assert got == pytest.approx(base + 6.0 * kl * 0.25, abs=1e-12)

    def test_unit_omega_equals_mart(self, rng):
        za, zn = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        y = rng.integers(0, 4, 5)
        a = mart_loss(za, zn, y, 6.0)
        np.testing.assert_array_equal(a, mart_loss(za, zn, y, 6.0, MartVariant.GAIR_MARGIN, 1.0))
        # the KL-reweighted variant recovers MART when omega is MART's own slack 1 - p_y(x)
        p_y = np.exp(zn - np.log(np.exp(zn).sum(axis=1, keepdims=True)))[np.arange(5), y]
        np.testing.assert_allclose(a, mart_loss(za, zn, y, 6.0, MartVariant.GAIR_KL, 1 - p_y), atol=1e-13)

    def test_omega_range_checked(self):
        with pytest.raises(ValueError):
            mart_loss(np.zeros((1, 2)), np.zeros((1, 2)), [0], 6.0, MartVariant.GAIR_MARGIN, 1.5)

    @pytest.mark.parametrize("variant", list(MartVariant))
    def test_batch_grads_fd(self, rng, variant):
        for _ in range(4):
            model = random_mlp(rng)
            x = rng.normal(size=(3, model.in_features))
            x_adv = x + rng.uniform(-0.2, 0.2, size=x.shape)
            y = rng.integers(0, model.class_count, 3)
            omega = rng.uniform(0, 1, 3)
            _, _, grads = mart_batch_grads(model, x, x_adv, y, 6.0, variant, omega)

            def objective():
                return float(mart_loss(model.forward(x_adv), model.forward(x), y, 6.0, variant, omega).mean())

            for p, g in zip(model.params, grads):
                assert rel_err(g, fd_gradient(objective, p)) <= 1e-5


@pytest.mark.parametrize("kind", list(TrainerKind))
def test_each_trainer_learns_blobs(kind):
    data = _blobs(n=100)
    attack = AttackConfig(epsilon=0.2, alpha=0.05, steps=5, xi=0.001)
    cfg = TrainerConfig(kind=kind, attack=attack, scheme=WeightScheme(Family.TANH, 0.0, burn_in_epochs=2),
                        epochs=6, batch_size=32, schedule=LrSchedule(0.05))
    model = _model(3)
    stats = [train_epoch(model, data, cfg, e) for e in range(6)]
    assert all(np.isfinite(s.mean_loss) for s in stats)
    assert stats[-1].nat_err < 0.35
    assert len(stats[-1].kappa) == len(data)
    assert np.all((stats[-1].kappa >= 0) & (stats[-1].kappa <= 5))


def test_friendly_training_runs_with_tau_schedule():
    data = _blobs(n=50)
    cfg = TrainerConfig(attack=AttackConfig(epsilon=0.2, alpha=0.05, steps=5), friendly=True,
                        tau_schedule=((0, 0), (2, 1)), epochs=3, batch_size=25, schedule=LrSchedule(0.05))
    model = _model(4)
    for e in range(3):
        stats = train_epoch(model, data, cfg, e)
    assert np.isfinite(stats.mean_loss)


def test_epoch_is_reproducible():
    data = _blobs(n=50)
    cfg = TrainerConfig(attack=AttackConfig(epsilon=0.2, alpha=0.05, steps=3, random_start=RandomStart.UNIFORM),
                        epochs=2, batch_size=16)
    a, b = _model(5), _model(5)
    for e in range(2):
        train_epoch(a, data, cfg, e)
        train_epoch(b, data, cfg, e)
    assert all(p.tobytes() == q.tobytes() for p, q in zip(a.params, b.params))
