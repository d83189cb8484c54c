from __future__ import annotations

import numpy as np
import pytest

from jsibell.core import Scenario
from jsibell.simulate import Instrument, NoiseModel, PhaseGrid, periods_needed, synthesize_jsi
from jsibell.wrapfit import jsi_to_probabilities


def synthetic(d, M, *, visibility=1.0, counts=1e7, seed=0, lam=None, periods=None, jitter=0.0):
    sc = Scenario(d, M)
    ins = Instrument()
    grid = PhaseGrid(sc, periods_covered=periods or periods_needed(sc, ins))
    noise = NoiseModel(visibility=visibility, jitter_sigma=jitter, total_coincidences=counts)
    return sc, synthesize_jsi(sc, grid, lam, noise, seed=seed, instrument=ins)


@pytest.fixture(scope="session")
def d6_pipeline():
    """d=6, M=38, v=1, 1e8 counts: fit, calibrate, wrap, normalise."""
    sc, jsi = synthetic(6, 38, counts=1e8, seed=0)
    P, res, model, cal = jsi_to_probabilities(jsi, sc)
    return sc, jsi, P, res, model, cal


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
