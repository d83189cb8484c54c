import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jsibell.core import (
    TWO_PI,
    BellInequality,
    ConditionalProbabilities,
    JsiRecord,
    PhaseGrid,
    Scenario,
    ScenarioError,
    WrappedDistribution,
    cglmp_basis_indices,
    cglmp_phase_offsets,
    grid_index_from_labels,
    grid_to_tensor,
    label_phase,
    labels_from_grid_index,
    phase_from_frequency,
    tensor_to_grid,
)


class TestScenario:
    def test_n_is_m_times_d(self):
        assert Scenario(6, 38).N == 228
        assert Scenario(3, 4).N == 12

    @pytest.mark.parametrize("d,M", [(1, 4), (17, 4), (3, 3), (3, 0), (3, 258)])
    def test_rejects_out_of_range(self, d, M):
        with pytest.raises(ScenarioError):
            Scenario(d, M)

    def test_bin_width(self):
        assert Scenario(3, 4).bin_width == pytest.approx(TWO_PI / 12)


class TestPhaseFromFrequency:
    @pytest.mark.parametrize("nu,dt,phi", [(0.0, 1e-12, 0.0), (1e12, 1e-12, TWO_PI), (0.5e12, 1e-12, math.pi)])
    def test_examples(self, nu, dt, phi):
        assert phase_from_frequency(nu, dt) == pytest.approx(phi, abs=1e-15)

    @pytest.mark.parametrize("nu,dt", [(math.nan, 1e-12), (1.0, math.inf), (1.0, 0.0), (1.0, -1e-12)])
    def test_rejects(self, nu, dt):
        with pytest.raises(ValueError):
            phase_from_frequency(nu, dt)

    def test_vectorised(self):
        out = phase_from_frequency([0.0, 0.25e12], 1e-12)
        np.testing.assert_allclose(out, [0.0, math.pi / 2])


class TestLabels:
    def test_alice_example(self):
        sc = Scenario(3, 4)
        assert labels_from_grid_index(6, sc) == (1, 2)
        assert label_phase(1, 2, sc) == pytest.approx(math.pi)
        assert labels_from_grid_index(0, sc) == (0, 0)
        assert label_phase(0, 0, sc) == 0.0

    def test_bob_example(self):
        sc = Scenario(6, 38)
        assert label_phase(0, 19, sc, "bob") == pytest.approx(TWO_PI / 6 * 0.25, abs=1e-15)

    def test_bob_outcome_is_negated_block(self):
        sc = Scenario(4, 2)
        # block 1 -> b = mod(-1, 4) = 3
        assert labels_from_grid_index(2, sc, "bob") == (3, 0)

    def test_out_of_range(self):
        sc = Scenario(3, 4)
        with pytest.raises(ScenarioError):
            labels_from_grid_index(12, sc)
        with pytest.raises(ScenarioError):
            labels_from_grid_index(-1, sc)
        with pytest.raises(ScenarioError):
            grid_index_from_labels(3, 0, sc)
        with pytest.raises(ScenarioError):
            labels_from_grid_index(0, sc, "eve")

    @settings(max_examples=200, deadline=None)
    @given(d=st.integers(2, 16), half_m=st.integers(1, 32), data=st.data(), party=st.sampled_from(["alice", "bob"]))
    def test_round_trip(self, d, half_m, data, party):
        sc = Scenario(d, 2 * half_m)
        i = data.draw(st.integers(0, sc.N - 1))
        a, x = labels_from_grid_index(i, sc, party)
        assert grid_index_from_labels(a, x, sc, party) == i

    @settings(max_examples=100, deadline=None)
    @given(d=st.integers(2, 16), half_m=st.integers(1, 32), party=st.sampled_from(["alice", "bob"]))
    def test_phases_lie_on_lattice(self, d, half_m, party):
        sc = Scenario(d, 2 * half_m)
        grid = PhaseGrid(sc)
        centres = grid.alice_centers() if party == "alice" else grid.bob_centers()
        phases = np.array([label_phase(*labels_from_grid_index(i, sc, party), sc, party) for i in range(sc.N)])
        # Bob's phase label is mod(-b, d) so block index and label phase agree exactly
        np.testing.assert_allclose(phases, centres, atol=1e-12)

    def test_default_bob_origin_is_quarter_step(self):
        g = PhaseGrid(Scenario(6, 38))
        assert g.bob_origin - g.alice_origin == pytest.approx(-(TWO_PI / 6) / 4)


class TestCglmpBases:
    @pytest.mark.parametrize("d,M,half", [(3, 4, 2), (6, 38, 19), (2, 2, 1)])
    def test_examples(self, d, M, half):
        xs, ys = cglmp_basis_indices(Scenario(d, M))
        assert set(xs) == {0, half}
        assert set(ys) == {0, half}

    def test_phase_offsets_are_exact(self):
        (a1, a2), (b1, b2) = cglmp_phase_offsets(Scenario(6, 38))
        assert (a1, a2) == (0.0, 0.5)
        assert (b1, b2) == (0.25, -0.25)


class TestJsiRecord:
    def test_copies_and_freezes(self):
        counts = np.array([[1, 2], [3, 4]])
        rec = JsiRecord(counts, [0.0, 1.0], [0.0, 1.0])
        counts[0, 0] = 99
        assert rec.counts[0, 0] == 1
        with pytest.raises(ValueError):
            rec.counts[0, 0] = 5

    def test_negative_count_names_cell(self):
        with pytest.raises(ValueError, match="row 1, column 0"):
            JsiRecord([[1, 2], [-3, 4]], [0, 1], [0, 1])

    @pytest.mark.parametrize(
        "counts,ax_a,ax_b",
        [
            ([[1.5, 2], [3, 4]], [0, 1], [0, 1]),
            ([[1, 2], [3, 4]], [0, 0], [0, 1]),
            ([[1, 2], [3, 4]], [0, 1, 2], [0, 1]),
            ([1, 2], [0, 1], [0]),
        ],
    )
    def test_invalid(self, counts, ax_a, ax_b):
        with pytest.raises(ValueError):
            JsiRecord(counts, ax_a, ax_b)

    def test_decreasing_axis_allowed(self):
        JsiRecord([[1, 2], [3, 4]], [1.0, 0.0], [0.0, 1.0])


class TestTensors:
    def test_grid_tensor_round_trip(self, rng):
        sc = Scenario(3, 4)
        grid = rng.random((12, 12))
        np.testing.assert_array_equal(tensor_to_grid(grid_to_tensor(grid, sc), sc), grid)

    def test_tensor_addresses_labels(self, rng):
        sc = Scenario(3, 4)
        grid = rng.random((12, 12))
        t = grid_to_tensor(grid, sc)
        for i in range(12):
            for j in range(12):
                a, x = labels_from_grid_index(i, sc, "alice")
                b, y = labels_from_grid_index(j, sc, "bob")
                assert t[a, b, x, y] == grid[i, j]

    def test_wrapped_validation(self):
        sc = Scenario(2, 2)
        with pytest.raises(ValueError):
            WrappedDistribution(np.ones((3, 3)), sc)
        with pytest.raises(ValueError):
            WrappedDistribution(-np.ones((4, 4)), sc)
        with pytest.raises(ValueError):
            WrappedDistribution(np.full((4, 4), np.nan), sc)


class TestConditionalProbabilities:
    def test_block_sums_checked(self):
        t = np.full((2, 2, 2, 2), 0.25)
        ConditionalProbabilities(t)
        t2 = t.copy()
        t2[0, 0, 1, 0] += 0.1
        with pytest.raises(ValueError, match="x=1, y=0"):
            ConditionalProbabilities(t2)

    def test_negative_needs_flag(self):
        t = np.full((2, 2, 1, 1), 0.25)
        t[0, 0] = -0.05
        t[0, 1] = 0.55
        with pytest.raises(ValueError):
            ConditionalProbabilities(t)
        ConditionalProbabilities(t, allow_negative=True)

    def test_select_bases(self, rng):
        t = rng.random((2, 2, 4, 4))
        t /= t.sum(axis=(0, 1), keepdims=True)
        P = ConditionalProbabilities(t)
        Q = P.select_bases((2, 0), (1, 3))
        np.testing.assert_array_equal(Q.tensor[:, :, 0, 1], t[:, :, 2, 3])
        assert Q.x_settings == (2, 0)


def test_bell_inequality_value():
    c = np.zeros((2, 2, 1, 1))
    c[0, 0, 0, 0] = 2.0
    ineq = BellInequality(c, 1.0)
    P = np.full((2, 2, 1, 1), 0.25)
    assert ineq.value(P) == 0.5
    assert ineq.violation(P) == -0.5
