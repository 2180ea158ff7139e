import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import linear_model, random_mlp
from gairlab.attacks import AttackConfig, RandomStart, ga_pgd_early_stopped, pgd
from gairlab.data import Dataset, gen_gaussian_blobs
from gairlab.evaluation import (
    CheckpointHistory,
    boundary_flatness,
    geometry_profile,
    lower_median,
    profile_from_kappa,
    robust_error,
    select_checkpoint,
    standard_error,
)
from gairlab.losses import softmax


def _onehot_model(C):
    # logits = x @ I with x a one-hot row: the true class scores 1, others 0
    return linear_model(np.eye(C))


class TestStandardError:
    def test_perfect_model(self):
        y = np.array([0, 2, 1, 2])
        d = Dataset(np.eye(3)[y], y, 3)
        assert standard_error(_onehot_model(3), d) == 0.0

    def test_constant_logits_send_everything_to_class_zero(self):
        C = 4
        y = np.repeat(np.arange(C), 5)
        d = Dataset(np.random.default_rng(0).normal(size=(20, 3)), y, C)
        model = linear_model(np.zeros((3, C)))
        assert standard_error(model, d) == pytest.approx((C - 1) / C, abs=1e-15)

    def test_empty(self):
        d = Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)
        assert standard_error(linear_model(np.eye(2)), d) == 0.0
        assert robust_error(linear_model(np.eye(2)), d, AttackConfig()) == 0.0


class TestRobustError:
    def test_zero_radius_equals_standard(self, rng):
        model = random_mlp(rng, in_features=2)
        d = gen_gaussian_blobs(0, 30)
        d = Dataset(d.inputs, d.labels % model.class_count, model.class_count)
        cfg = AttackConfig(epsilon=0.0, alpha=0.1, steps=5, random_start=RandomStart.UNIFORM)
        assert robust_error(model, d, cfg) == standard_error(model, d)

    def test_threshold_with_margin_above_eps(self, threshold_model):
        x = np.array([[-0.9], [-0.5], [0.4], [0.8]])
        d = Dataset(x, [0, 0, 1, 1], 2)
        cfg = AttackConfig(epsilon=0.3, alpha=0.075, steps=20, random_start=RandomStart.UNIFORM)
        assert robust_error(threshold_model, d, cfg, np.random.default_rng(0)) == 0.0

    def test_threshold_with_margin_below_eps(self, threshold_model):
        d = Dataset(np.array([[-0.1], [0.5]]), [0, 1], 2)
        cfg = AttackConfig(epsilon=0.3, alpha=0.075, steps=20)
        assert robust_error(threshold_model, d, cfg) == 0.5

    @given(st.integers(0, 2**32 - 1), st.sampled_from(list(RandomStart)))
    def test_bounds(self, seed, start):
        rng = np.random.default_rng(seed)
        model = random_mlp(rng, in_features=2)
        x = rng.normal(size=(10, 2))
        d = Dataset(x, rng.integers(0, model.class_count, 10), model.class_count)
        cfg = AttackConfig(epsilon=0.2, alpha=0.05, steps=4, random_start=start, restarts=2)
        r, s = robust_error(model, d, cfg, rng), standard_error(model, d)
        assert 0 <= s <= r <= 1


class TestProfile:
    def test_misclassified_everywhere(self, threshold_model):
        d = Dataset(np.array([[-0.5], [-0.2], [-0.9]]), [1, 1, 1], 2)
        p = geometry_profile(threshold_model, d, AttackConfig(epsilon=0.3, alpha=0.1, steps=10))
        np.testing.assert_array_equal(p.kappa, 0)
        assert p.mean == 0 and p.median == 0

    def test_never_fooled(self, threshold_model):
        d = Dataset(np.array([[0.5], [0.9]]), [1, 1], 2)
        p = geometry_profile(threshold_model, d, AttackConfig(epsilon=0.3, alpha=0.1, steps=10))
        np.testing.assert_array_equal(p.kappa, 10)
        assert p.histogram[10] == 2

    def test_lower_median(self):
        assert lower_median([3, 1, 4, 2]) == 2
        assert lower_median([5]) == 5
        assert lower_median([]) == 0

    @given(st.lists(st.integers(0, 20), min_size=1, max_size=100))
    def test_profile_matches_sort_oracle(self, kappa):
        p = profile_from_kappa(kappa, 20)
        s = sorted(kappa)
        assert p.median == s[(len(s) - 1) // 2]
        assert p.mean == pytest.approx(sum(kappa) / len(kappa), abs=1e-12)
        assert p.histogram.tolist() == [kappa.count(i) for i in range(21)]


class TestFlatness:
    def test_constant_model(self, rng):
        model = linear_model(np.zeros((2, 3)), np.array([1.0, 0.0, -1.0]))
        d = Dataset(rng.normal(size=(8, 2)), rng.integers(0, 3, 8), 3)
        assert boundary_flatness(model, d, AttackConfig(epsilon=0.1, alpha=0.02, steps=5)) == 0.0

    @pytest.mark.parametrize("friendly", [True, False])
    def test_linear_closed_form(self, rng, friendly):
        W = rng.normal(size=(3, 4))
        model = linear_model(W)
        x = rng.normal(size=(6, 3))
        y = rng.integers(0, 4, 6)
        d = Dataset(x, y, 4)
        cfg = AttackConfig(epsilon=0.3, alpha=0.1, steps=5)
        if friendly:
            adv = ga_pgd_early_stopped(model, x, y, cfg, tau=0).adversarial
        else:
            adv = pgd(model, x, y, cfg).adversarial
        p = softmax(adv @ W)
        norms = [np.linalg.norm(W @ (p[i] - np.eye(4)[y[i]])) for i in range(6)]
        assert boundary_flatness(model, d, cfg, friendly=friendly) == pytest.approx(np.mean(norms), rel=1e-13)

    def test_order_invariant(self, rng):
        model = random_mlp(rng, in_features=2)
        d = Dataset(rng.normal(size=(12, 2)), rng.integers(0, model.class_count, 12), model.class_count)
        perm = rng.permutation(12)
        cfg = AttackConfig(epsilon=0.2, alpha=0.05, steps=4)
        a = boundary_flatness(model, d, cfg)
        b = boundary_flatness(model, d.subset(perm), cfg)
        assert a == pytest.approx(b, rel=1e-14)


class TestSelection:
    def _history(self, errs):
        h = CheckpointHistory()
        for e, r in enumerate(errs):
            h.add(e, f"epoch_{e}", r)
        return h

    def test_single_entry(self):
        s = select_checkpoint(self._history([0.3]))
        assert s["best_epoch"] == s["last_epoch"] == 0

    def test_improving(self):
        s = select_checkpoint(self._history([0.5, 0.4, 0.3]))
        assert s["best_epoch"] == s["last_epoch"] == 2

    def test_overfitting_curve(self):
        s = select_checkpoint(self._history([0.5, 0.4, 0.45]))
        assert (s["best_epoch"], s["best_robust_error"]) == (1, 0.4)
        assert (s["last_epoch"], s["last_robust_error"]) == (2, 0.45)

    def test_ties_pick_earliest(self):
        assert select_checkpoint(self._history([0.4, 0.3, 0.3]))["best_epoch"] == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            select_checkpoint(CheckpointHistory())
