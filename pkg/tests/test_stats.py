import json
import math
from pathlib import Path

import numpy as np
import pytest

from jsibell.bell import cglmp_inequality, cglmp_probabilities, cglmp_value
from jsibell.core import BellInequality, Scenario, WrappedDistribution
from jsibell.simulate import cglmp_phase_probabilities
from jsibell.stats import (
    DegenerateScoreError,
    ScoreModel,
    bell_pvalue,
    mcdiarmid_pvalue,
    poisson_bootstrap,
    score_model,
    settings_probability,
)
from jsibell.wrapfit import jsi_to_probabilities

from conftest import synthetic

FIXTURE = Path(__file__).parent / "data" / "pvalue_fixture.json"


def blocks(totals, d=2):
    """Counts tensor whose (x, y) blocks hold the given totals on the diagonal outcome."""
    t = np.zeros((d, d, 2, 2))
    t[0, 0] = np.asarray(totals, dtype=float).reshape(2, 2)
    return t


def direct_bound(model):
    """The product-form McDiarmid bound, evaluated naively in floating point."""
    r, smax, smin, beta = model.mean_score, model.s_max, model.s_min, model.beta_L
    span = smax - smin
    base = ((smax - beta) / (smax - r)) ** ((smax - r) / span) * ((beta - smin) / (r - smin)) ** ((r - smin) / span)
    return base**model.n


def model(r, n, s_max=4.0, s_min=-4.0, beta=2.0):
    return ScoreModel(np.zeros(1), s_max, s_min, beta, n, r * n)


class TestSettingsProbability:
    def test_equal(self):
        np.testing.assert_allclose(settings_probability(blocks([5, 5, 5, 5])).probabilities, 0.25)

    def test_skewed(self):
        sp = settings_probability(blocks([100, 100, 100, 700]))
        np.testing.assert_allclose(sp.probabilities.ravel(), [0.1, 0.1, 0.1, 0.7], atol=1e-15)
        assert not sp.empty_blocks.any()

    def test_single_block(self):
        sp = settings_probability(blocks([0, 0, 9, 0]))
        assert sp.probabilities[1, 0] == 1.0
        np.testing.assert_array_equal(sp.empty_blocks, [[True, True], [False, True]])

    def test_errors(self):
        with pytest.raises(ValueError):
            settings_probability(np.zeros((2, 2, 2, 2)))
        with pytest.raises(ValueError):
            settings_probability(-blocks([1, 1, 1, 1]))
        with pytest.raises(ValueError):
            settings_probability(np.ones((2, 3, 2, 2)))


class TestScoreModel:
    def test_uniform_settings(self):
        ineq = cglmp_inequality(2)
        m = score_model(ineq, np.full((2, 2), 0.25), np.ones((2, 2, 2, 2)))
        assert m.s_max == pytest.approx(4 * ineq.coefficients.max(), abs=1e-15)
        assert m.s_min == pytest.approx(4 * ineq.coefficients.min(), abs=1e-15)
        assert m.beta_L == 2.0

    @pytest.mark.parametrize("d", [2, 3, 7])
    def test_plug_in_value(self, d):
        P = cglmp_phase_probabilities(None, d).tensor
        counts = P * 123456.0
        m = score_model(cglmp_inequality(d), settings_probability(counts).probabilities, counts)
        assert m.mean_score == pytest.approx(cglmp_value(P), abs=1e-9)
        assert m.s_min <= m.mean_score <= m.s_max

    def test_plug_in_with_unequal_blocks(self, rng):
        counts = rng.integers(0, 500, (3, 3, 2, 2)).astype(float)
        m = score_model(cglmp_inequality(3), settings_probability(counts).probabilities, counts)
        P = counts / counts.sum(axis=(0, 1), keepdims=True)
        assert m.mean_score == pytest.approx(cglmp_value(P), abs=1e-12)

    def test_rescaling_invariance(self, rng):
        counts = rng.integers(1, 100, (3, 3, 2, 2))
        ineq = cglmp_inequality(3)
        p = settings_probability(counts).probabilities
        assert score_model(ineq, p, 7 * counts).mean_score == pytest.approx(score_model(ineq, p, counts).mean_score, abs=1e-14)

    def test_degenerate(self):
        zero = BellInequality(np.zeros((2, 2, 2, 2)), 0.0)
        with pytest.raises(DegenerateScoreError):
            score_model(zero, np.full((2, 2), 0.25), np.ones((2, 2, 2, 2)))

    def test_zero_probability_with_coefficients(self):
        p = np.array([[0.5, 0.5], [0.0, 0.0]])
        with pytest.raises(ValueError, match="x=1, y=0"):
            score_model(cglmp_inequality(2), p, np.ones((2, 2, 2, 2)))

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            score_model(cglmp_inequality(2), np.full((2, 2), 0.25), np.ones((3, 3, 2, 2)))
        with pytest.raises(ValueError):
            score_model(cglmp_inequality(2), np.full(4, 0.25), np.ones((2, 2, 2, 2)))


class TestPValue:
    def test_one_at_bound(self):
        assert mcdiarmid_pvalue(model(2.0, 1e6)) == (0.0, 1.0)
        assert mcdiarmid_pvalue(model(1.0, 1e6)).p == 1.0

    def test_linear_in_n(self):
        for r in (2.1, 2.5, 3.9):
            a = mcdiarmid_pvalue(model(r, 1000)).log10_p
            b = mcdiarmid_pvalue(model(r, 2000)).log10_p
            assert b / a == pytest.approx(2.0, abs=1e-9)

    def test_matches_product_form(self):
        for r, n in ((2.2, 50), (2.8, 100), (3.5, 20)):
            m = model(r, n)
            assert mcdiarmid_pvalue(m).p == pytest.approx(direct_bound(m), rel=1e-10)

    def test_monotone(self):
        ns = [10, 100, 1000, 1e4, 1e6]
        ps = [mcdiarmid_pvalue(model(2.3, n)).log10_p for n in ns]
        assert all(b <= a for a, b in zip(ps, ps[1:]))
        rs = np.linspace(2.0, 4.0, 30)
        ps = [mcdiarmid_pvalue(model(r, 500)).log10_p for r in rs]
        assert all(b <= a for a, b in zip(ps, ps[1:]))

    def test_range_and_underflow(self):
        for r in (2.0, 2.001, 3.0):
            pv = mcdiarmid_pvalue(model(r, 1e7))
            assert 0.0 <= pv.p <= 1.0 and pv.log10_p <= 0
        pv = mcdiarmid_pvalue(model(3.0, 1e7))
        assert pv.p == 0.0 and math.isfinite(pv.log10_p) and pv.log10_p < -1000

    def test_limit_at_s_max(self):
        pv = mcdiarmid_pvalue(model(4.0, 10))
        q_beta = (2.0 + 4.0) / 8.0
        assert pv.log10_p == pytest.approx(10 * math.log10(q_beta), abs=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateScoreError):
            mcdiarmid_pvalue(model(2.0, 10, s_max=1.0, s_min=1.0))
        with pytest.raises(DegenerateScoreError):
            mcdiarmid_pvalue(model(2.0, 10, s_max=1.5))

    def test_frozen_fixture(self):
        data = json.loads(FIXTURE.read_text())
        counts = np.array(data["counts"])
        assert bell_pvalue(cglmp_inequality(7), counts).log10_p == pytest.approx(data["log10_p"], rel=1e-12)

    def test_frozen_fixture_from_synthesis(self):
        data = json.loads(FIXTURE.read_text())
        s = data["synthesis"]
        sc, jsi = synthetic(s["d"], s["M"], visibility=s["visibility"], counts=s["counts"], seed=s["seed"])
        _, res, _, _ = jsi_to_probabilities(jsi, sc)
        from jsibell.core import cglmp_basis_indices, grid_to_tensor

        xs, ys = cglmp_basis_indices(sc)
        counts = grid_to_tensor(res.wrapped.values, sc)[:, :, list(xs)][:, :, :, list(ys)]
        np.testing.assert_array_equal(counts, np.array(data["counts"]))

    def test_uniform_vs_estimated_settings(self):
        counts = np.array(json.loads(FIXTURE.read_text())["counts"])
        est = bell_pvalue(cglmp_inequality(7), counts)
        uni = bell_pvalue(cglmp_inequality(7), counts, np.full((2, 2), 0.25))
        assert est.log10_p < 0 and uni.log10_p < 0
        assert est.log10_p != uni.log10_p


def i_statistic(sc):
    return lambda P: cglmp_value(cglmp_probabilities(P, sc))


class TestBootstrap:
    @pytest.fixture(scope="class")
    @classmethod
    def small(cls):
        sc, jsi = synthetic(3, 4, counts=1e5, seed=2)
        _, res, _, _ = jsi_to_probabilities(jsi, sc)
        return sc, res.wrapped

    def test_poisson_scaling(self, small):
        sc, w = small
        big = WrappedDistribution(w.values * 100, sc, "counts")
        ratios = [
            poisson_bootstrap(w, sc, i_statistic(sc), seed=s).sigma / poisson_bootstrap(big, sc, i_statistic(sc), seed=s).sigma
            for s in range(20)
        ]
        assert np.mean(ratios) == pytest.approx(10.0, rel=0.3)

    def test_resample_count_stability(self, d6_pipeline):
        sc, _, _, res, _, _ = d6_pipeline
        s50 = poisson_bootstrap(res.wrapped, sc, i_statistic(sc), R=50, seed=1).sigma
        s200 = poisson_bootstrap(res.wrapped, sc, i_statistic(sc), R=200, seed=2).sigma
        assert s50 == pytest.approx(s200, rel=0.25)

    def test_mean_close_to_plug_in(self, d6_pipeline):
        sc, _, P, res, _, _ = d6_pipeline
        bs = poisson_bootstrap(res.wrapped, sc, i_statistic(sc), R=50, seed=3)
        assert abs(bs.mean - i_statistic(sc)(P)) < bs.sigma

    def test_deterministic(self, small):
        sc, w = small
        a = poisson_bootstrap(w, sc, i_statistic(sc), seed=9)
        b = poisson_bootstrap(w, sc, i_statistic(sc), seed=9)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.values.size == 50

    def test_errors(self, small):
        sc, w = small
        with pytest.raises(ValueError):
            poisson_bootstrap(WrappedDistribution(np.zeros_like(w.values), sc, "counts"), sc, i_statistic(sc))
        with pytest.raises(ValueError):
            poisson_bootstrap(w, sc, i_statistic(sc), R=1)
        with pytest.raises(ValueError):
            poisson_bootstrap(w, Scenario(3, 5), i_statistic(sc))
