import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from dflocate.oracles import (
    PiecewiseLinearModel,
    TieError,
    brute_force_linear_delta,
    enumerate_linear_delta,
    greedy_linear_delta,
    greedy_piecewise_delta,
    linear_objective,
    piecewise_localizer,
)

betas = st.lists(st.floats(-5, 5, allow_nan=False).filter(lambda v: abs(v) > 1e-3),
                 min_size=1, max_size=5, unique_by=lambda v: round(abs(v), 6))


class TestGreedy:
    def test_three_one_two(self):
        np.testing.assert_array_equal(greedy_linear_delta([3, 1, 2], 1.5), [1, 0, 0.5])

    def test_integer_budget(self):
        np.testing.assert_array_equal(greedy_linear_delta([-2, 5], 2), [-1, 1])

    def test_vanishing_budget(self):
        d = greedy_linear_delta([3, 1, 2], 1e-9)
        assert np.abs(d).sum() <= 1e-9 + 1e-15
        np.testing.assert_allclose(d, 0, atol=1e-9)

    def test_tie_at_boundary(self):
        with pytest.raises(TieError) as e:
            greedy_linear_delta([2, 2, 1], 1)
        assert e.value.indices == [0, 1]

    def test_tie_inside_support_is_fine(self):
        np.testing.assert_array_equal(greedy_linear_delta([2, 2, 1], 2), [1, 1, 0])

    def test_zero_coefficient_gets_zero(self):
        np.testing.assert_array_equal(greedy_linear_delta([0, 3, 0], 2.5), [0, 1, 0])

    def test_tau_range(self):
        with pytest.raises(ValueError):
            greedy_linear_delta([1, 2], 3)
        with pytest.raises(ValueError):
            greedy_linear_delta([1, 2], 0)

    @given(betas, st.floats(0.01, 1.0))
    def test_norms(self, beta, frac):
        tau = frac * len(beta)
        d = greedy_linear_delta(beta, tau)
        assert np.abs(d).sum() == pytest.approx(min(tau, len(beta)), abs=1e-12)
        assert np.abs(d).max() <= 1.0

    @given(betas, st.floats(0.01, 1.0), st.floats(0.1, 10))
    def test_scale_equivariant_support(self, beta, frac, c):
        tau = frac * len(beta)
        d1 = greedy_linear_delta(beta, tau)
        d2 = greedy_linear_delta(np.asarray(beta) * c, tau)
        np.testing.assert_array_equal(np.sign(d1), np.sign(d2))

    @given(betas, st.floats(0.01, 1.0), st.floats(0.01, 1.0))
    def test_support_grows_with_budget(self, beta, f1, f2):
        t1, t2 = sorted((f1 * len(beta), f2 * len(beta)))
        assume(t2 > t1)
        s1 = greedy_linear_delta(beta, t1) != 0
        s2 = greedy_linear_delta(beta, t2) != 0
        assert np.all(s2[s1])


class TestBruteForce:
    def test_three_one_two(self):
        bf = brute_force_linear_delta([3, 1, 2], 1.5, 0.01)
        g = greedy_linear_delta([3, 1, 2], 1.5)
        assert abs(linear_objective(bf, [3, 1, 2]) - linear_objective(g, [3, 1, 2])) <= 0.01 * 3
        np.testing.assert_allclose(bf, g, atol=0.01)

    def test_full_budget_is_sign(self):
        beta = np.array([0.5, -2.0, 1.0])
        np.testing.assert_array_equal(brute_force_linear_delta(beta, 3), np.sign(beta))

    def test_zero_entry_breaks_to_zero(self):
        np.testing.assert_array_equal(brute_force_linear_delta([0.0, 1.0], 2, 0.05), [0, 1])

    def test_dimension_limit(self):
        with pytest.raises(ValueError):
            brute_force_linear_delta(np.ones(7), 1)

    def test_agrees_with_literal_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            beta = rng.standard_normal(3)
            tau = float(rng.choice([0.5, 1.0, 1.25, 2.0, 2.75]))
            d_dp = brute_force_linear_delta(beta, tau, 0.05)
            d_en = enumerate_linear_delta(beta, tau, 0.05)
            assert linear_objective(d_dp, beta) == pytest.approx(linear_objective(d_en, beta), rel=1e-9)

    @settings(max_examples=50)
    @given(betas, st.floats(0.05, 1.0))
    def test_greedy_matches_brute_force(self, beta, frac):
        tau = round(frac * len(beta), 2)
        assume(tau > 0)
        g = greedy_linear_delta(beta, tau)
        bf = brute_force_linear_delta(beta, tau, 0.01)
        tol = 0.01 * np.abs(beta).max() * len(beta)
        assert abs(np.sqrt(linear_objective(g, beta)) - np.sqrt(linear_objective(bf, beta))) <= tol


class TestPiecewise:
    def _two_regions(self):
        return PiecewiseLinearModel([lambda x: x[0] < 0.5, lambda x: x[0] >= 0.5],
                                    [np.array([3.0, 1.0]), np.array([1.0, 3.0])])

    def test_two_regions(self):
        d1, d2 = greedy_piecewise_delta(self._two_regions(), 1)
        np.testing.assert_array_equal(d1, [1, 0])
        np.testing.assert_array_equal(d2, [0, 1])
        for v, beta in enumerate(self._two_regions().betas):
            bf = brute_force_linear_delta(beta, 1)
            np.testing.assert_allclose([d1, d2][v], bf)

    def test_one_region_reduces_to_linear(self):
        m = PiecewiseLinearModel([lambda x: True], [np.array([3.0, 1.0, 2.0])])
        np.testing.assert_array_equal(greedy_piecewise_delta(m, 1.5)[0], greedy_linear_delta([3, 1, 2], 1.5))

    def test_unvisited_region_still_computed(self):
        m = PiecewiseLinearModel([lambda x: True, lambda x: False], [np.array([1.0, 2.0]), np.array([4.0, 1.0])])
        np.testing.assert_array_equal(greedy_piecewise_delta(m, 1)[1], [1, 0])

    def test_localizer_dispatch(self):
        loc = piecewise_localizer(self._two_regions(), 1)
        np.testing.assert_array_equal(loc(np.array([0.2, 0.9])), [1, 0])
        np.testing.assert_array_equal(loc(np.array([0.7, 0.1])), [0, 1])

    def test_tie_reports_region(self):
        m = PiecewiseLinearModel([lambda x: x[0] < 0.5, lambda x: x[0] >= 0.5],
                                 [np.array([3.0, 1.0]), np.array([2.0, 2.0])])
        with pytest.raises(TieError) as e:
            greedy_piecewise_delta(m, 1)
        assert e.value.region == 1

    def test_overlapping_cover_rejected(self):
        m = PiecewiseLinearModel([lambda x: True, lambda x: True], [np.ones(2), np.ones(2)])
        with pytest.raises(ValueError):
            m.region_of(np.zeros(2))
