import math
from statistics import NormalDist, fmean, stdev

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pac_reasoning.exceptions import (
    EmptyGridError,
    InsufficientSamplesError,
    InvalidRangeError,
    SamplingError,
)
from pac_reasoning.ucb import (
    SamplingPlan,
    UcbCurve,
    WeightedLossSamples,
    build_curve,
    calibration_grid,
    clt_bound,
    cumulative_moments,
    draw_samples,
    hoeffding_bound,
    hoeffding_slack,
    normal_quantile,
)

from .conftest import make_records


def _samples(z, u=None, w=0.5):
    z = np.asarray(z, dtype=float)
    u = np.zeros_like(z) if u is None else np.asarray(u, dtype=float)
    return WeightedLossSamples(np.arange(len(z)), z > 0, z, u, np.full(len(z), w))


def _clt_oracle(z, alpha):
    return fmean(z) + NormalDist().inv_cdf(1 - alpha) * stdev(z) / math.sqrt(len(z))


class TestSamplingPlan:
    def test_default_size(self):
        plan = SamplingPlan.default(500, 0.5, seed=3)
        assert plan.sample_size == 1000 and plan.seed == 3

    @pytest.mark.parametrize("w", [0.0, -0.1, 1.5, [0.5, 0.0]])
    def test_bad_weights(self, w):
        with pytest.raises(InvalidRangeError):
            SamplingPlan(w, 10)

    def test_per_item_weights(self):
        plan = SamplingPlan([0.2, 0.5, 1.0], 10)
        assert plan.min_weight(3) == 0.2
        with pytest.raises(InvalidRangeError):
            plan.weights_for(4)


class TestDrawSamples:
    def test_deterministic(self):
        u = np.linspace(0, 1, 50)
        a = draw_samples(u, SamplingPlan(0.5, 100, 9), u)
        b = draw_samples(u, SamplingPlan(0.5, 100, 9), u)
        np.testing.assert_array_equal(a.weighted_loss, b.weighted_loss)
        np.testing.assert_array_equal(a.index, b.index)

    def test_weighting(self):
        u = np.linspace(0, 1, 20)
        losses = np.full(20, 0.3)
        s = draw_samples(u, SamplingPlan(0.5, 200, 1), losses)
        np.testing.assert_allclose(s.weighted_loss[s.queried], 0.6)
        assert np.all(s.weighted_loss[~s.queried] == 0)
        np.testing.assert_allclose(s.uncertainty, u[s.index])

    def test_pi_one_queries_everything(self):
        u = np.linspace(0, 1, 10)
        s = draw_samples(u, SamplingPlan(1.0, 30, 0), u)
        assert s.n_queries == 30

    def test_oracle_called_once_per_item(self):
        calls = []
        recs = make_records(np.linspace(0, 1, 5))
        s = draw_samples(recs, SamplingPlan(1.0, 200, 0), lambda rid: calls.append(rid) or 1.0)
        assert sorted(calls) == sorted(set(calls))
        assert set(calls) == {recs[i].id for i in np.unique(s.index)}

    def test_oracle_failure_reports_position(self):
        def oracle(i):
            raise RuntimeError("boom")

        with pytest.raises(SamplingError) as info:
            draw_samples(np.linspace(0, 1, 5), SamplingPlan(1.0, 5, 0), oracle)
        assert info.value.position == 0

    def test_cap(self):
        s = draw_samples([0.1, 0.2], SamplingPlan(0.5, 50, 0), [2.0, 2.0], loss_cap=1.0)
        assert s.weighted_loss.max() == pytest.approx(2.0)

    def test_empty(self):
        with pytest.raises(EmptyGridError):
            draw_samples([], SamplingPlan(0.5, 5), [])


class TestCLT:
    def test_four_point_example(self):
        s = _samples([0, 0, 1, 1])
        assert clt_bound(s, 1.0, 0.05) == pytest.approx(_clt_oracle([0, 0, 1, 1], 0.05), rel=1e-12)
        assert clt_bound(s, 1.0, 0.05) == pytest.approx(0.9749, abs=1e-4)

    def test_masking(self):
        s = _samples([1, 2, 3, 4], u=[0.1, 0.2, 0.3, 0.4])
        assert clt_bound(s, 0.25, 0.1) == pytest.approx(_clt_oracle([1, 2, 0, 0], 0.1))

    def test_needs_two(self):
        with pytest.raises(InsufficientSamplesError):
            clt_bound(_samples([1.0]), 1.0, 0.05)

    def test_quantile_matches_stdlib(self):
        for p in (0.5, 0.9, 0.95, 0.975, 0.999):
            assert normal_quantile(p) == pytest.approx(NormalDist().inv_cdf(p), abs=1e-12)


class TestHoeffding:
    def test_slack_unit_range(self):
        assert hoeffding_slack(100, 0.05, 1.0, 1.0) == pytest.approx(math.sqrt(math.log(40) / 200))
        assert hoeffding_slack(100, 0.05, 1.0, 1.0) == pytest.approx(0.1358, abs=1e-4)

    def test_slack_scales_with_weight(self):
        assert hoeffding_slack(100, 0.05, 1.0, 0.5) == pytest.approx(2 * hoeffding_slack(100, 0.05, 1.0, 1.0))

    def test_bound(self):
        s = _samples([2.0, 0.0, 4.0, 0.0], w=0.5)  # the 4.0 is capped at 1/0.5
        expected = (2 + 0 + 2 + 0) / 4 + math.sqrt(4 * math.log(2 / 0.1) / 8)
        assert hoeffding_bound(s, 1.0, 0.1, 1.0, 0.5) == pytest.approx(expected)

    @pytest.mark.parametrize("cap, w", [(0.0, 0.5), (1.0, 0.0), (-1.0, 0.5)])
    def test_invalid(self, cap, w):
        with pytest.raises(InvalidRangeError):
            hoeffding_slack(10, 0.05, cap, w)


class TestCurve:
    def test_grid_collapses_ties(self):
        np.testing.assert_array_equal(calibration_grid([0.3, 0.1, 0.3, 0.2]), [0.1, 0.2, 0.3])

    def test_matches_pointwise(self, synthetic_set):
        u, losses = synthetic_set
        s = draw_samples(u, SamplingPlan(0.5, 800, 4), losses)
        grid = calibration_grid(u)[::37]
        clt = build_curve(s, grid, 0.05, "clt")
        hoef = build_curve(s, grid, 0.05, "hoeffding", loss_cap=1.0, min_weight=0.5)
        for g, b1, b2 in zip(grid, clt.bounds, hoef.bounds):
            assert b1 == pytest.approx(clt_bound(s, g, 0.05), abs=1e-12)
            assert b2 == pytest.approx(hoeffding_bound(s, g, 0.05, 1.0, 0.5), abs=1e-12)

    def test_moments_oracle(self):
        s = _samples([1.0, 3.0, 0.0, 2.0], u=[0.4, 0.1, 0.3, 0.2])
        mean, sd = cumulative_moments(s, np.array([0.2, 0.4]))
        z02 = [0, 3, 0, 2]
        assert mean[0] == pytest.approx(fmean(z02)) and sd[0] == pytest.approx(stdev(z02))
        assert mean[1] == pytest.approx(1.5)

    def test_degenerate_flag(self):
        s = _samples([0.0, 0.0, 2.0], u=[0.1, 0.2, 0.9])
        curve = build_curve(s, [0.15, 0.95], 0.05)
        assert curve.degenerate.tolist() == [True, False]

    def test_empty_grid(self):
        with pytest.raises(EmptyGridError):
            build_curve(_samples([0, 1]), [], 0.05)

    def test_hoeffding_needs_range(self):
        with pytest.raises(InvalidRangeError):
            build_curve(_samples([0, 1]), [0.5], 0.05, "hoeffding")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            build_curve(_samples([0, 1]), [0.5], 0.05, "bernstein")

    def test_unsorted_grid_rejected(self):
        with pytest.raises(ValueError):
            UcbCurve(np.array([0.2, 0.1]), np.zeros(2), np.zeros(2), "clt", 0.05, np.zeros(2, bool))

    def test_digest_stable(self, synthetic_set):
        u, losses = synthetic_set
        s = draw_samples(u, SamplingPlan(0.5, 800, 4), losses)
        a = build_curve(s, calibration_grid(u), 0.05)
        b = build_curve(s, calibration_grid(u), 0.05)
        assert a.digest() == b.digest()
        assert a.digest() != build_curve(s, calibration_grid(u), 0.1).digest()

    @settings(max_examples=60, deadline=None)
    @given(
        st.integers(2, 60),
        st.integers(0, 2**31 - 1),
        st.sampled_from(["clt", "hoeffding"]),
        st.floats(0.1, 1.0),
    )
    def test_mean_non_decreasing(self, n, seed, kind, pi):
        rng = np.random.default_rng(seed)
        u = rng.random(n)
        losses = rng.random(n)
        s = draw_samples(u, SamplingPlan(pi, 2 * n, seed), losses, loss_cap=1.0 if kind == "hoeffding" else None)
        curve = build_curve(s, calibration_grid(u), 0.05, kind, loss_cap=1.0, min_weight=pi)
        assert np.all(np.diff(curve.means) >= -1e-12)
        assert np.all(curve.bounds >= curve.means - 1e-12)
