import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dflocate.data import Dataset
from dflocate.localizer import ConstantLocalizer
from dflocate.metrics import (
    DegenerateR2Error,
    R2Report,
    bootstrap_from_losses,
    bootstrap_r2_ci,
    format_table,
    generalized_partial_r2,
    mean_loss,
    order_statistic_indices,
    per_instance_losses,
    r2_from_losses,
)
from dflocate.predictor import LinearPredictor, Predictor


class StubPredictor:
    """Per-instance loss read off the first feature: full inputs lose 1.0,
    disrupted inputs (first feature lowered) lose ``1 + drop * factor``."""
    loss_kind = "squared-error"

    def __init__(self, factor=1.0):
        self.factor = factor

    def losses(self, x, y):
        return 1.0 + self.factor * (1.0 - np.asarray(x).reshape(len(x), -1)[:, 0])


class ShiftLocalizer:
    def __init__(self, amount, tau=1.0):
        self.amount = amount
        self.tau = tau

    def localize(self, x):
        x = np.asarray(x)
        delta = np.zeros_like(x)
        delta[:, 0] = np.minimum(self.amount, x[:, 0])
        return np.zeros_like(x), delta, x - delta


def ones_data(n=40, p=3):
    return Dataset(np.ones((n, p)), np.zeros(n))


class TestMeanLoss:
    def test_uniform_two_class(self):
        d = Predictor([{"type": "dense", "units": 2}], (3,), seed=0)
        for p in d.params.values():
            p.data[...] = 0.0
        data = Dataset(np.random.default_rng(0).uniform(size=(5, 3)), np.array([0, 1, 0, 1, 1]))
        assert mean_loss(d, data) == pytest.approx(np.log(2))

    def test_perfect_prediction_at_clamp_floor(self):
        d = Predictor([{"type": "dense", "units": 2}], (1,), seed=0)
        d.params["layer0.weight"].data = np.array([[200.0, -200.0]])
        d.params["layer0.bias"].data = np.zeros(2)
        assert mean_loss(d, Dataset(np.ones((3, 1)), np.zeros(3, dtype=int))) <= 1e-11

    def test_squared_error_exact(self):
        beta = np.array([1.0, 2.0])
        x = np.random.default_rng(1).uniform(size=(6, 2))
        assert mean_loss(LinearPredictor(beta), Dataset(x, x @ beta)) == pytest.approx(0.0, abs=1e-24)

    def test_empty(self):
        with pytest.raises(ValueError):
            mean_loss(StubPredictor(), Dataset(np.zeros((0, 2)), np.zeros(0)))


class TestR2:
    def test_no_disruption_gives_zero(self):
        assert generalized_partial_r2(StubPredictor(), ShiftLocalizer(0.0), ones_data()) == 0.0

    def test_half(self):
        # full loss 1, disrupted loss 2
        assert generalized_partial_r2(StubPredictor(), ShiftLocalizer(1.0), ones_data()) == pytest.approx(0.5)

    def test_negative_returned(self):
        # disruption lowers the loss: factor < 0
        r2 = generalized_partial_r2(StubPredictor(-0.5), ShiftLocalizer(1.0), ones_data())
        assert r2 == pytest.approx(1 - 1 / 0.5)
        assert r2 < 0

    def test_zero_denominator(self):
        with pytest.raises(DegenerateR2Error):
            r2_from_losses(np.zeros(3), np.zeros(3))

    def test_constant_localizer_on_linear_model(self):
        beta = np.array([3.0, -1.0])
        rng = np.random.default_rng(0)
        x = rng.uniform(size=(50, 2))
        y = x @ beta + 0.1 * rng.standard_normal(50)
        loc = ConstantLocalizer(2, 1.0)
        full = np.mean((y - x @ beta) ** 2)
        dis = np.mean((y - (x - loc.delta()) @ beta) ** 2)
        r2 = generalized_partial_r2(LinearPredictor(beta), loc, Dataset(x, y))
        assert r2 == pytest.approx(1 - full / dis)

    @given(arrays(np.float64, 30, elements=st.floats(0.01, 5)), arrays(np.float64, 30, elements=st.floats(0, 5)))
    def test_below_one_and_monotone(self, full, extra):
        r1 = r2_from_losses(full, full + extra)
        r2 = r2_from_losses(full, full + 2 * extra)
        assert r1 < 1
        assert r2 >= r1 - 1e-12

    @given(st.permutations(list(range(12))))
    def test_order_invariance(self, perm):
        rng = np.random.default_rng(4)
        full, dis = rng.uniform(1, 2, 12), rng.uniform(2, 3, 12)
        p = np.array(perm)
        assert r2_from_losses(full[p], dis[p]) == pytest.approx(r2_from_losses(full, dis), rel=1e-12)


class TestPerInstance:
    def test_lengths_and_sums(self):
        beta = np.array([1.0, -2.0])
        x = np.random.default_rng(2).uniform(size=(3, 2))
        data = Dataset(x, np.zeros(3))
        d = LinearPredictor(beta)
        full, dis = per_instance_losses(d, ConstantLocalizer(2, 1.0), data)
        assert full.shape == dis.shape == (3,)
        assert full.sum() == pytest.approx(mean_loss(d, data) * 3, abs=1e-12)

    def test_shuffled_same_multiset(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(size=(8, 2))
        d, loc = LinearPredictor(np.array([1.0, 1.0])), ConstantLocalizer(2, 1.5)
        f1, d1 = per_instance_losses(d, loc, Dataset(x, np.zeros(8)))
        perm = rng.permutation(8)
        f2, d2 = per_instance_losses(d, loc, Dataset(x[perm], np.zeros(8)))
        np.testing.assert_allclose(np.sort(f1), np.sort(f2))
        np.testing.assert_allclose(np.sort(d1), np.sort(d2))

    def test_kind_mismatch(self):
        with pytest.raises(ValueError):
            per_instance_losses(StubPredictor(), ShiftLocalizer(0.5), ones_data(), kind="cross-entropy")


class TestBootstrap:
    def test_indices_floor_rule(self):
        assert order_statistic_indices(500, 0.95) == (12, 487)
        assert order_statistic_indices(100, 0.95) == (2, 97)
        assert order_statistic_indices(100, 0.999) == (1, 99)

    def test_constant_losses_zero_width(self):
        lo, hi, _ = bootstrap_from_losses(np.ones(40), 2 * np.ones(40), B=200)
        assert lo == hi == pytest.approx(0.5)

    def test_bit_exact_for_fixed_seed(self):
        rng = np.random.default_rng(0)
        full, dis = rng.uniform(0.1, 1, 60), rng.uniform(1, 2, 60)
        a = bootstrap_from_losses(full, dis, 500, seed=11)
        b = bootstrap_from_losses(full, dis, 500, seed=11)
        assert a[0] == b[0] and a[1] == b[1] and a[2].tobytes() == b[2].tobytes()
        assert bootstrap_from_losses(full, dis, 500, seed=12)[2].tobytes() != a[2].tobytes()

    def test_uses_sorted_order_statistics(self):
        rng = np.random.default_rng(1)
        full, dis = rng.uniform(0.1, 1, 50), rng.uniform(1, 2, 50)
        lo, hi, est = bootstrap_from_losses(full, dis, 500, 0.95, seed=3)
        assert np.all(np.diff(est) >= 0)
        assert lo == est[11] and hi == est[486]
        assert lo <= hi

    def test_replicates_independent_of_count(self):
        # replicate b only depends on (seed, b)
        rng = np.random.default_rng(2)
        full, dis = rng.uniform(0.1, 1, 40), rng.uniform(1, 2, 40)
        n = 40
        idx = np.random.default_rng([5, 0]).integers(0, n, size=n)
        first = 1 - full[idx].sum() / dis[idx].sum()
        _, _, est = bootstrap_from_losses(full, dis, 100, seed=5)
        assert first in est

    def test_preconditions(self):
        with pytest.raises(ValueError):
            bootstrap_from_losses(np.ones(40), np.ones(40), B=50)
        with pytest.raises(ValueError):
            bootstrap_from_losses(np.ones(10), np.ones(10))
        with pytest.raises(ValueError):
            bootstrap_from_losses(np.ones(40), np.ones(40), level=1.0)

    def test_degenerate_resamples(self):
        dis = np.zeros(40)
        with pytest.raises(DegenerateR2Error):
            bootstrap_from_losses(np.ones(40), dis, B=100)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_narrower_with_more_data(self, seed):
        rng = np.random.default_rng(seed)
        widths = []
        for n in (50, 200):
            full = rng.exponential(0.3, n)
            dis = full + rng.exponential(0.6, n)
            lo, hi, _ = bootstrap_from_losses(full, dis, 200, seed=seed)
            widths.append(hi - lo)
        assert widths[0] > 0 and widths[1] > 0


class TestReport:
    def test_fields_exact(self):
        r = bootstrap_r2_ci(StubPredictor(), ShiftLocalizer(1.0, tau=2.0), ones_data(), B=100, seed=0)
        assert set(json.loads(r.dumps())) == {"point_estimate", "tau", "empirical_j", "ci_lower", "ci_upper",
                                              "ci_level", "bootstrap_count"}
        assert r.point_estimate == pytest.approx(0.5)
        assert r.tau == 2.0 and r.bootstrap_count == 100

    def test_table(self):
        r = R2Report(0.5, 8.0, 7.9, 0.45, 0.55, 0.95, 500)
        table = format_table([("cae", r)])
        assert "J(.)" in table and "0.500" in table and "7.900" in table
