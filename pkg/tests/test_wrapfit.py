import math

import numpy as np
import pytest

from jsibell.bell import cglmp_probabilities, cglmp_value
from jsibell.core import TWO_PI, JsiRecord, PhaseGrid, Scenario, grid_index_from_labels, labels_from_grid_index, quarter_step
from jsibell.simulate import Instrument, NoiseModel, conditional_from_state, expected_jsi, jpd_binned, normalize_blocks, periods_needed, synthesize_jsi
from jsibell.wrapfit import (
    CalibratedCounts,
    CalibrationError,
    FitError,
    FringeModel,
    NormalizationError,
    WrapError,
    anti_diagonal_marginal,
    fit_principal_fringes,
    jsi_to_probabilities,
    model_from_truth,
    normalize,
    phase_calibrate,
    wrap,
)
from jsibell.core import WrappedDistribution

from conftest import synthetic


def noiseless(sc, periods, instrument, mass_tol=1e-4, grid=None):
    """Envelope-modulated expected intensity scaled to large integers (no sampling noise)."""
    grid = grid or PhaseGrid(sc, periods_covered=periods)
    mu = expected_jsi(sc, grid, None, NoiseModel(total_coincidences=1.0), instrument, mass_tol=mass_tol)
    ref = synthesize_jsi(sc, grid, None, NoiseModel(total_coincidences=1.0), instrument=instrument, mass_tol=mass_tol)
    return JsiRecord(np.rint(mu * 1e15).astype(np.int64), ref.axis_a, ref.axis_b, ref.meta)


class TestFit:
    @pytest.mark.parametrize("d,M", [(2, 4), (3, 4), (4, 4), (2, 38), (3, 16), (3, 38), (4, 38), (6, 38), (8, 38), (3, 100)])
    def test_recovers_period_and_offset(self, d, M):
        sc, jsi = synthetic(d, M, counts=1e7, seed=1)
        model = fit_principal_fringes(jsi, d)
        assert model.period_bins == sc.N
        assert model.period_bins % d == 0
        assert abs(model.offset_bins - jsi.meta["truth"]["offset_bins"]) <= 0.25

    def test_d6_m38_example(self):
        _, jsi = synthetic(6, 38, counts=1e7, seed=11)
        assert fit_principal_fringes(jsi, 6).period_bins == 228

    def test_shifted_offset(self):
        sc = Scenario(6, 38)
        ins = Instrument()
        base = PhaseGrid(sc, periods_covered=periods_needed(sc, ins))
        shifted = PhaseGrid(sc, alice_origin=-5 * sc.bin_width, periods_covered=base.periods_covered)
        f0 = fit_principal_fringes(synthesize_jsi(sc, base, noise=NoiseModel(total_coincidences=1e7), seed=3), 6)
        jsi = synthesize_jsi(sc, shifted, noise=NoiseModel(total_coincidences=1e7), seed=3)
        f1 = fit_principal_fringes(jsi, 6)
        assert jsi.meta["truth"]["offset_bins"] - 5 == pytest.approx(f0.offset_bins, abs=0.25)
        assert abs(f1.offset_bins - jsi.meta["truth"]["offset_bins"]) <= 0.25
        assert f1.offset_bins - f0.offset_bins == pytest.approx(5.0, abs=0.25)

    def test_flat_input_fails(self):
        _, jsi = synthetic(3, 16, visibility=0.0, counts=1e7, seed=4)
        with pytest.raises(FitError):
            fit_principal_fringes(jsi, 3)

    def test_empty_input_fails(self):
        with pytest.raises(FitError):
            fit_principal_fringes(JsiRecord(np.zeros((50, 50), dtype=int), np.arange(50), np.arange(50)), 3)

    def test_fit_error_carries_diagnostics(self):
        _, jsi = synthetic(3, 16, visibility=0.0, counts=1e7, seed=4)
        with pytest.raises(FitError) as info:
            fit_principal_fringes(jsi, 3)
        assert isinstance(info.value.diagnostics, dict)

    def test_period_must_be_multiple_of_d(self):
        with pytest.raises(ValueError, match="multiple"):
            FringeModel(3, 100, 0.0, (1, 1, 1), (1, 1, 1), 0.0)

    def test_anti_diagonal_marginal(self):
        m = anti_diagonal_marginal(np.arange(6).reshape(2, 3))
        np.testing.assert_array_equal(m, [0, 1 + 3, 2 + 4, 5])


class TestCalibrate:
    @pytest.fixture(scope="class")
    @classmethod
    def calibrated(cls):
        sc, jsi = synthetic(6, 38, counts=1e7, seed=1)
        model = fit_principal_fringes(jsi, 6)
        return sc, jsi, model, phase_calibrate(jsi, model, sc)

    def test_central_fringe_at_zero_phase(self, calibrated):
        sc, _, model, cal = calibrated
        # phase sum at row+col = offset, i.e. on the central fringe ridge
        phase_sum = (model.offset_bins - cal.alice_shift - cal.bob_shift) * sc.bin_width - quarter_step(sc.d)
        wrapped = (phase_sum + math.pi) % TWO_PI - math.pi
        assert abs(wrapped) <= 0.25 * sc.bin_width

    def test_period_apart_differs_by_two_pi(self, calibrated):
        sc, _, _, cal = calibrated
        np.testing.assert_allclose(cal.alice_phase[sc.N :] - cal.alice_phase[: -sc.N], TWO_PI, atol=1e-12)
        np.testing.assert_allclose(cal.bob_phase[sc.N :] - cal.bob_phase[: -sc.N], TWO_PI, atol=1e-12)

    def test_labels_round_trip_against_truth(self, calibrated):
        sc, jsi, _, cal = calibrated
        truth = jsi.meta["truth"]
        # synthesis put grid index 0 at (origin_row, origin_col); only the sum is observable
        assert (cal.alice_index[truth["origin_row"]] + cal.bob_index[truth["origin_col"]]) % sc.N == 0
        for party, idx in (("alice", cal.alice_index), ("bob", cal.bob_index)):
            for i in idx[:: 37] % sc.N:
                assert grid_index_from_labels(*labels_from_grid_index(int(i), sc, party), sc, party) == i

    def test_inconsistent_scenario(self, calibrated):
        _, jsi, model, _ = calibrated
        with pytest.raises(CalibrationError):
            phase_calibrate(jsi, model, Scenario(6, 36))

    def test_truth_model(self, calibrated):
        sc, jsi, model, _ = calibrated
        truth = model_from_truth(jsi)
        assert truth.period_bins == model.period_bins
        assert truth.offset_bins == pytest.approx(model.offset_bins, abs=0.25)
        with pytest.raises(CalibrationError):
            model_from_truth(JsiRecord([[1]], [0.0], [0.0]))


class TestWrap:
    def test_five_by_five_proportional_to_binned(self):
        # a broad envelope: a 5-cell grid cannot hold a narrow Gaussian flat to 1e-3
        sc = Scenario(3, 4)
        ins = Instrument(sigma_t=0.005e-12)
        jsi = noiseless(sc, 5, ins, mass_tol=0.99)
        _, res, _, _ = jsi_to_probabilities(jsi, sc, model_from_truth(jsi))
        assert res.cells == (5, 5)
        W = normalize_blocks(res.wrapped.values, sc)
        np.testing.assert_allclose(W, jpd_binned(sc).values, rtol=1e-3)

    @pytest.mark.parametrize("d,M", [(3, 4), (6, 38)])
    def test_wrap_then_normalise_equals_ideal(self, d, M):
        sc = Scenario(d, M)
        ins = Instrument()
        jsi = noiseless(sc, periods_needed(sc, ins), ins)
        P, res, _, _ = jsi_to_probabilities(jsi, sc, model_from_truth(jsi))
        assert np.max(np.abs(normalize_blocks(res.wrapped.values, sc) - jpd_binned(sc).values)) < 1e-3

    @pytest.mark.parametrize("k", [1, 5, -3, 17])
    def test_translation_invariance(self, k):
        sc = Scenario(3, 4)
        ins = Instrument()
        jsi = noiseless(sc, periods_needed(sc, ins), ins)
        P, _, model, cal = jsi_to_probabilities(jsi, sc, model_from_truth(jsi))
        I0 = cglmp_value(cglmp_probabilities(P, sc))
        moved = CalibratedCounts(cal.counts, sc, cal.alice_shift + k, cal.bob_shift - k)
        I1 = cglmp_value(cglmp_probabilities(normalize(wrap(moved).wrapped), sc))
        assert abs(I1 - I0) < 1e-6

    def test_single_cell_is_identity(self, rng):
        sc = Scenario(2, 2)
        counts = rng.integers(0, 100, (4, 4))
        res = wrap(CalibratedCounts(counts, sc, 0, 0))
        np.testing.assert_array_equal(res.wrapped.values, counts)
        assert res.cells == (1, 1)

    def test_count_conservation(self, rng):
        sc = Scenario(2, 4)
        counts = rng.integers(0, 1000, (29, 31))
        res = wrap(CalibratedCounts(counts, sc, 3, 6))
        assert res.wrapped.values.sum() == res.included_counts
        assert res.included_counts + res.excluded_counts == counts.sum()
        assert res.cells == (3, 3)

    def test_partial_cells_excluded_whole(self):
        sc = Scenario(2, 2)
        counts = np.ones((6, 6), dtype=int)
        res = wrap(CalibratedCounts(counts, sc, 1, 1))
        # rows 1..4 and cols 1..4 form one 4x4 cell
        assert res.cells == (1, 1)
        assert res.included_counts == 16

    def test_too_small(self):
        with pytest.raises(WrapError):
            wrap(CalibratedCounts(np.ones((3, 3), dtype=int), Scenario(2, 2), 0, 0))


class TestNormalize:
    def test_uniform(self):
        sc = Scenario(3, 4)
        P = normalize(WrappedDistribution(np.full((12, 12), 7.0), sc))
        np.testing.assert_allclose(P.tensor, 1 / 9, atol=1e-15)
        assert P.block_totals.shape == (4, 4)
        assert np.all(P.block_totals == 63)

    def test_block_sums(self, rng):
        sc = Scenario(4, 6)
        P = normalize(WrappedDistribution(rng.integers(1, 50, (24, 24)), sc))
        np.testing.assert_allclose(P.tensor.sum(axis=(0, 1)), 1.0, atol=1e-12)

    def test_zero_block_named(self):
        sc = Scenario(2, 2)
        values = np.ones((4, 4))
        values[np.ix_([0, 2], [1, 3])] = 0  # x = 0, y = 1
        with pytest.raises(NormalizationError, match="x=0, y=1"):
            normalize(WrappedDistribution(values, sc))

    def test_requires_counts(self):
        sc = Scenario(2, 2)
        with pytest.raises(ValueError):
            normalize(WrappedDistribution(jpd_binned(sc).values, sc, "probabilities"))

    def test_d6_matches_conditional_within_poisson(self, d6_pipeline):
        sc, _, P, res, _, _ = d6_pipeline
        ideal = conditional_from_state(None, sc, (0, 19), (19, 0)).tensor
        Pc = cglmp_probabilities(P, sc)
        counts = Pc.block_totals[None, None]
        sigma = np.sqrt(np.maximum(ideal * counts, 1.0)) / counts
        z = (Pc.tensor - ideal) / sigma
        assert np.max(np.abs(z)) < 3.5
        assert np.mean(np.abs(z) > 3) < 0.02
