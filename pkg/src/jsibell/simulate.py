"""Theoretical joint distributions and synthetic joint-spectral-intensity data.

All densities here depend on the phases only through ``phi_a + phi_b``.  For a
Schmidt-diagonal state ``sum_j lam_j |j>|j>`` measured in the Fourier bases the
joint density is ``|sum_j lam_j exp(i j (phi_a + phi_b))|**2 / d**2``, which for
``lam_j = 1/sqrt(d)`` is the familiar Fejer-type kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, special

from .core import (
    TWO_PI,
    ConditionalProbabilities,
    JsiRecord,
    PhaseGrid,
    Scenario,
    WrappedDistribution,
    grid_to_tensor,
    tensor_to_grid,
)

_SERIES_CUTOFF = 1e-6


@dataclass(frozen=True)
class StateCoefficients:
    """Schmidt coefficients ``lam_j >= 0`` with ``sum lam_j**2 == 1``."""

    lam: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float).ravel()
        if lam.size < 2:
            raise ValueError("need at least two Schmidt coefficients")
        if not np.all(np.isfinite(lam)) or np.any(lam < 0):
            raise ValueError("Schmidt coefficients must be finite and non-negative")
        norm = float(np.sum(lam**2))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"Schmidt coefficients are not normalised: sum(lam**2) = {norm!r}")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @property
    def d(self) -> int:
        return self.lam.size

    @classmethod
    def maximally_entangled(cls, d: int) -> "StateCoefficients":
        return cls(np.full(d, 1.0 / math.sqrt(d)))

    @classmethod
    def from_unnormalized(cls, values) -> "StateCoefficients":
        values = np.abs(np.asarray(values, dtype=float))
        return cls(values / np.linalg.norm(values))


def as_state(lam, d: int | None = None) -> StateCoefficients:
    """Accept ``None`` (maximally entangled, needs ``d``), an array or a StateCoefficients."""
    if isinstance(lam, StateCoefficients):
        state = lam
    elif lam is None:
        if d is None:
            raise ValueError("dimension needed for the maximally entangled default")
        state = StateCoefficients.maximally_entangled(d)
    else:
        state = StateCoefficients(lam)
    if d is not None and state.d != d:
        raise ValueError(f"state has {state.d} coefficients, scenario has d={d}")
    return state


@dataclass(frozen=True)
class NoiseModel:
    """White-noise visibility, detector jitter (s) and expected coincidence total."""

    visibility: float = 1.0
    jitter_sigma: float = 0.0
    total_coincidences: float = 1e7

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError(f"visibility {self.visibility} outside [0, 1]")
        if not self.jitter_sigma >= 0.0:
            raise ValueError("jitter_sigma must be >= 0")
        if not self.total_coincidences >= 0:
            raise ValueError("total_coincidences must be >= 0")


@dataclass(frozen=True)
class Instrument:
    """Time-bin spacing and width (seconds) and the envelope-width scale factor."""

    delta_t: float = 1e-12
    sigma_t: float = 0.1e-12
    envelope_scale: float = 1.0

    def __post_init__(self):
        if not (self.delta_t > 0 and self.sigma_t > 0 and self.envelope_scale > 0):
            raise ValueError("delta_t, sigma_t and envelope_scale must be positive")

    @property
    def envelope_sigma_phase(self) -> float:
        """Standard deviation (rad) of the Gaussian envelope on each phase axis."""
        return self.delta_t / (2.0 * self.sigma_t * self.envelope_scale)


def jpd_continuous(d: int, phi_a, phi_b):
    """Maximally entangled joint density ``sin^2(d s/2) / (d^3 sin^2(s/2))``, ``s = phi_a + phi_b``.

    Near ``s = 0 (mod 2*pi)`` the removable singularity is replaced by its
    series ``(1/d) * (1 - (d**2 - 1) * e**2 / 12)``.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    s = np.asarray(phi_a, dtype=float) + np.asarray(phi_b, dtype=float)
    e = s - TWO_PI * np.round(s / TWO_PI)
    den = np.sin(e / 2.0)
    small = np.abs(den) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, den)
    out = np.where(
        small,
        (1.0 - (d * d - 1.0) * e * e / 12.0) / d,
        np.sin(d * e / 2.0) ** 2 / (d**3 * safe**2),
    )
    return float(out) if out.ndim == 0 else out


def state_density(lam, phase_sum):
    """``|sum_j lam_j exp(i j s)|**2 / d**2`` via its cosine series (no singularities)."""
    lam = as_state(lam).lam
    d = lam.size
    s = np.asarray(phase_sum, dtype=float)
    # autocorrelation of the coefficients gives the cosine-series weights
    c = np.correlate(lam, lam, mode="full")[d - 1 :]
    out = np.full(s.shape, c[0])
    for m in range(1, d):
        if c[m] != 0.0:
            out = out + 2.0 * c[m] * np.cos(m * s)
    out = out / d**2
    return float(out) if out.ndim == 0 else out


def conditional_from_state(lam, scenario: Scenario, x_settings=None, y_settings=None) -> ConditionalProbabilities:
    """Point-evaluated ``P(a, b | x, y)`` at the grid phases of the requested bases.

    ``P(a,b|x,y) = |sum_j lam_j exp(i j theta)|**2 / d**2`` with
    ``theta = (2*pi/d) * (a + x/M + mod(-b, d) + y/M - 1/4)``.
    """
    d, M = scenario.d, scenario.M
    state = as_state(lam, d)
    xs = list(range(M)) if x_settings is None else [int(x) for x in x_settings]
    ys = list(range(M)) if y_settings is None else [int(y) for y in y_settings]
    for s in xs + ys:
        if not 0 <= s < M:
            raise ValueError(f"setting {s} outside [0, {M})")
    a = np.arange(d)[:, None, None, None]
    b = np.arange(d)[None, :, None, None]
    x = np.asarray(xs, dtype=float)[None, None, :, None]
    y = np.asarray(ys, dtype=float)[None, None, None, :]
    theta = TWO_PI / d * (a + x / M + (-b) % d + y / M - 0.25)
    P = state_density(state, theta)
    # the cosine series is exact; renormalise only away rounding
    P = P / P.sum(axis=(0, 1), keepdims=True)
    return ConditionalProbabilities(P, tuple(xs), tuple(ys))


def cglmp_phase_probabilities(lam, d: int) -> ConditionalProbabilities:
    """``P(a, b | x, y)`` at the exact CGLMP phases, settings in CGLMP order."""
    scenario = Scenario(d, 2)
    # M = 2: x in (0, 1) gives alpha = (0, 1/2); y in (1, 0) gives beta = (+1/4, -1/4)
    return conditional_from_state(lam, scenario, (0, 1), (1, 0))


def _bin_sum_integrals(lam, centres_sum: np.ndarray, width: float, order: int) -> np.ndarray:
    """Gauss-Legendre integral of the density over a ``width x width`` square per sum-centre."""
    if order < 1 or order > 64:
        raise ValueError(f"quadrature order {order} outside [1, 64]")
    nodes, weights = np.polynomial.legendre.leggauss(order)
    half = width / 2.0
    offs = (nodes[:, None] + nodes[None, :]).ravel() * half
    wts = (weights[:, None] * weights[None, :]).ravel() * half * half
    vals = state_density(lam, centres_sum[:, None] + offs[None, :])
    return vals @ wts


def jpd_binned(
    scenario: Scenario,
    grid: PhaseGrid | None = None,
    lam=None,
    *,
    order: int = 8,
    normalize: bool = True,
) -> WrappedDistribution:
    """Bin-integrated joint distribution over one 2*pi cell.

    Each ``(i, j)`` bin is the square of side ``2*pi/N`` centred on the grid
    lattice.  With ``normalize`` every ``(x, y)`` block is scaled to sum to 1;
    otherwise the raw integrals are returned (kind ``"counts"``).
    """
    grid = grid or PhaseGrid(scenario)
    if grid.scenario != scenario:
        raise ValueError("grid belongs to a different scenario")
    state = as_state(lam, scenario.d)
    N, w = scenario.N, scenario.bin_width
    # the integral depends on (i, j) only through i + j
    k = np.arange(2 * N - 1)
    G = _bin_sum_integrals(state, grid.alice_origin + grid.bob_origin + k * w, w, order)
    idx = np.arange(N)
    values = G[idx[:, None] + idx[None, :]]
    if not normalize:
        return WrappedDistribution(values, scenario, "counts")
    return WrappedDistribution(normalize_blocks(values, scenario), scenario, "probabilities")


def normalize_blocks(values: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Scale every ``(x, y)`` block of an N x N grid matrix to unit sum."""
    t = grid_to_tensor(values, scenario)
    totals = t.sum(axis=(0, 1), keepdims=True)
    if np.any(totals <= 0):
        raise ValueError("cannot normalise a block with zero total")
    return tensor_to_grid(t / totals, scenario)


def envelope_weight(phi_a, phi_b, sigma_t: float, delta_t: float, scale: float = 1.0):
    """Gaussian envelope ``exp(-2 (s sigma_t/delta_t)^2 (phi_a^2 + phi_b^2))``.

    Each time bin has intensity standard deviation ``sigma_t``; its spectral
    intensity falls as ``exp(-2 sigma_t^2 omega^2)`` with ``omega = phi/delta_t``.
    Phases are unwrapped (absolute).
    """
    if sigma_t <= 0 or delta_t <= 0:
        raise ValueError("sigma_t and delta_t must be positive")
    r = scale * sigma_t / delta_t
    phi_a = np.asarray(phi_a, dtype=float)
    phi_b = np.asarray(phi_b, dtype=float)
    out = np.exp(-2.0 * r * r * phi_a**2) * np.exp(-2.0 * r * r * phi_b**2)
    return float(out) if out.ndim == 0 else out


def detector_phases(grid: PhaseGrid) -> tuple[np.ndarray, np.ndarray, int]:
    """Unwrapped bin-centre phases of the synthetic detector grid.

    The grid has ``periods_covered * N`` bins per axis, centred on phase 0.
    Returns ``(phi_a, phi_b, origin_row)`` where ``origin_row`` is the row
    (and column) that carries grid index 0.
    """
    n = grid.periods_covered * grid.scenario.N
    r0 = n // 2
    offs = (np.arange(n) - r0) * grid.bin_width
    return grid.alice_origin + offs, grid.bob_origin + offs, r0


def envelope_mass_outside(grid: PhaseGrid, instrument: Instrument) -> float:
    """Fraction of the 2D envelope integral that falls outside the detector grid."""
    phi_a, phi_b, _ = detector_phases(grid)
    sigma = instrument.envelope_sigma_phase
    half = grid.bin_width / 2.0

    def inside(phi):
        lo, hi = (phi[0] - half) / sigma, (phi[-1] + half) / sigma
        return 0.5 * (special.erf(hi / math.sqrt(2)) - special.erf(lo / math.sqrt(2)))

    return float(1.0 - inside(phi_a) * inside(phi_b))


def periods_needed(scenario: Scenario, instrument: Instrument, tol: float = 1e-4) -> int:
    """Smallest odd ``periods_covered`` whose grid holds all but ``tol`` of the envelope."""
    periods = 1
    while envelope_mass_outside(PhaseGrid(scenario, periods_covered=periods), instrument) >= tol:
        periods += 2
        if periods > 201:
            raise ValueError("envelope too wide for a desk-scale grid")
    return periods


def expected_jsi(
    scenario: Scenario,
    grid: PhaseGrid,
    lam=None,
    noise: NoiseModel | None = None,
    instrument: Instrument | None = None,
    *,
    order: int = 8,
    mass_tol: float = 1e-4,
) -> np.ndarray:
    """Noise-free intensity on the detector grid, normalised to ``total_coincidences``.

    ``[v * density + (1 - v) / d**2]`` is integrated over each bin, weighted
    by the envelope at the bin centre and, with jitter, blurred by a Gaussian
    of phase width ``2*pi * jitter_sigma / delta_t`` along each axis.
    """
    noise = noise or NoiseModel()
    instrument = instrument or Instrument()
    state = as_state(lam, scenario.d)
    outside = envelope_mass_outside(grid, instrument)
    if outside >= mass_tol:
        raise ValueError(
            f"grid of {grid.periods_covered} periods leaves {outside:.2e} of the envelope "
            f"outside (target < {mass_tol:g}); use periods_covered >= "
            f"{periods_needed(scenario, instrument, mass_tol)}"
        )
    phi_a, phi_b, r0 = detector_phases(grid)
    n, w, d = phi_a.size, grid.bin_width, scenario.d
    k = np.arange(2 * n - 1) - 2 * r0
    G = _bin_sum_integrals(state, grid.alice_origin + grid.bob_origin + k * w, w, order)
    idx = np.arange(n)
    signal = G[idx[:, None] + idx[None, :]]
    intensity = noise.visibility * signal + (1.0 - noise.visibility) * w * w / d**2
    r = instrument.envelope_scale * instrument.sigma_t / instrument.delta_t
    intensity *= np.exp(-2.0 * r * r * phi_a**2)[:, None]
    intensity *= np.exp(-2.0 * r * r * phi_b**2)[None, :]
    if noise.jitter_sigma > 0:
        sigma_bins = TWO_PI * noise.jitter_sigma / instrument.delta_t / w
        intensity = ndimage.gaussian_filter(intensity, sigma_bins, mode="constant", truncate=5.0)
    return intensity * (noise.total_coincidences / intensity.sum())


def synthesize_jsi(
    scenario: Scenario,
    grid: PhaseGrid | None = None,
    lam=None,
    noise: NoiseModel | None = None,
    seed: int | None = 0,
    instrument: Instrument | None = None,
    *,
    order: int = 8,
    mass_tol: float = 1e-4,
) -> JsiRecord:
    """Poisson-sampled JSI on a frequency-offset grid.

    When ``grid`` is omitted the smallest grid meeting ``mass_tol`` is used.
    The returned record's ``meta["truth"]`` carries the generating parameters,
    including ``offset_bins``: the row+column index sum of the central
    principal fringe.
    """
    noise = noise or NoiseModel()
    instrument = instrument or Instrument()
    if grid is None:
        grid = PhaseGrid(scenario, periods_covered=periods_needed(scenario, instrument, mass_tol))
    mu = expected_jsi(scenario, grid, lam, noise, instrument, order=order, mass_tol=mass_tol)
    rng = np.random.default_rng(seed)
    counts = rng.poisson(mu)
    phi_a, phi_b, r0 = detector_phases(grid)
    to_hz = 1.0 / (TWO_PI * instrument.delta_t)
    state = as_state(lam, scenario.d)
    meta = {
        "axis_unit": "Hz",
        "delta_t": instrument.delta_t,
        "sigma_t": instrument.sigma_t,
        "jitter_sigma": noise.jitter_sigma,
        "dispersion_ps_per_nm": None,
        "lambda_ref_nm": None,
        "truth": {
            "d": scenario.d,
            "M": scenario.M,
            "lam": [float(v) for v in state.lam],
            "visibility": noise.visibility,
            "total_coincidences": float(noise.total_coincidences),
            "seed": seed,
            "periods_covered": grid.periods_covered,
            "alice_origin": grid.alice_origin,
            "bob_origin": grid.bob_origin,
            "origin_row": r0,
            "origin_col": r0,
            "offset_bins": 2 * r0 - (grid.alice_origin + grid.bob_origin) / grid.bin_width,
        },
    }
    return JsiRecord(counts, phi_a * to_hz, phi_b * to_hz, meta)
