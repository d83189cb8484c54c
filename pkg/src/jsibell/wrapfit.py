"""From a measured JSI to ``P(a, b | x, y)``: fringe fit, phase calibration, wrapping, normalisation.

The principal fringes of the joint intensity lie on lines of constant
``phi_a + phi_b``, i.e. constant detector row + column index.  The fit is done
on the marginal over those lines, which turns the 2D problem into a 1D sum of
three Gaussians on a constant background.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize, signal

from .core import (
    ConditionalProbabilities,
    JsiRecord,
    Scenario,
    WrappedDistribution,
    quarter_step,
)

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    """The principal fringes could not be located or fitted."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CalibrationError(ValueError):
    pass


class WrapError(ValueError):
    pass


@dataclass(frozen=True)
class FringeModel:
    """Fitted principal-fringe geometry along the row+column index sum.

    ``period_bins`` is the constrained period (an integer multiple of ``d``)
    and ``offset_bins`` the index sum at which the central fringe peaks.
    ``amplitudes``/``widths`` are ordered (previous, central, next).
    """

    d: int
    period_bins: int
    offset_bins: float
    amplitudes: tuple[float, float, float]
    widths: tuple[float, float, float]
    background: float
    raw_period: float = math.nan
    offset_error: float = math.nan
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.period_bins % self.d:
            raise ValueError(f"period {self.period_bins} is not a multiple of d={self.d}")

    @property
    def M(self) -> int:
        return self.period_bins // self.d


def anti_diagonal_marginal(counts: np.ndarray) -> np.ndarray:
    """Sum of counts along each line of constant row + column index."""
    counts = np.asarray(counts)
    r, c = np.indices(counts.shape)
    return np.bincount((r + c).ravel(), weights=counts.ravel().astype(float), minlength=sum(counts.shape) - 1)


def _three_gaussians(s, s0, period, a0, a1, a2, w0, w1, w2, bg):
    """Three equally spaced Gaussians plus background.

    The outer two are repeated at two and three periods out with their own
    amplitude and width: on the envelope-flattened marginal the fringes are
    periodic, and without these images the tails of the unmodelled fringes
    drag the outer ridges outwards when fringes overlap (small ``d``).
    """
    out = np.full_like(s, bg, dtype=float)
    for k, a, w in ((-3, a0, w0), (-2, a0, w0), (-1, a0, w0), (0, a1, w1), (1, a2, w2), (2, a2, w2), (3, a2, w2)):
        out += a * np.exp(-0.5 * ((s - s0 - k * period) / w) ** 2)
    return out


def _smoothing_width(m: np.ndarray) -> float:
    """Smoothing scale from the dominant fringe period, so short periods survive."""
    detrended = m - ndimage.gaussian_filter1d(m, 0.05 * m.size)
    power = np.abs(np.fft.rfft(detrended)) ** 2
    power[0] = 0.0
    k = int(np.argmax(power))
    if k == 0:
        return 2.0
    return float(np.clip(m.size / k / 8.0, 0.5, 2.0))


def _initial_guess(m: np.ndarray, min_prominence: float):
    smooth = ndimage.gaussian_filter1d(m, _smoothing_width(m))
    peaks, props = signal.find_peaks(smooth, prominence=min_prominence * smooth.max())
    if peaks.size < 3:
        raise FitError(
            f"found {peaks.size} prominent fringe(s), need at least 3",
            {"peaks": peaks.tolist()},
        )
    centre = peaks[np.argmax(smooth[peaks])]
    left, right = peaks[peaks < centre], peaks[peaks > centre]
    if left.size == 0 or right.size == 0:
        raise FitError("central fringe has no neighbour on one side", {"peaks": peaks.tolist()})
    prev_, next_ = left[-1], right[0]
    period = 0.5 * (next_ - prev_)
    if period <= 4:
        raise FitError(f"fringe spacing {period} bins is too small to resolve")
    return float(centre), float(period), smooth


def _gaussian(s, amp, centre, width):
    return amp * np.exp(-0.5 * ((s - centre) / width) ** 2)


def _envelope_estimate(m: np.ndarray, s0: float, period: float) -> np.ndarray:
    """Smooth Gaussian envelope of the marginal, normalised to peak 1.

    The envelope's slope across a fringe drags the outer fringe maxima towards
    the centre by roughly ``(width / envelope_width)**2`` periods, which is
    enough to round the period to the wrong multiple of ``d`` at low ``d``.
    A one-period box average is fitted with a Gaussian whose variance is then
    corrected for the box (``period**2 / 12``).  Returns ones if that fails.
    """
    s = np.arange(m.size, dtype=float)
    box = ndimage.uniform_filter1d(m, size=max(3, int(round(period))), mode="constant")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            (_, centre, width), _ = optimize.curve_fit(_gaussian, s, box, p0=[box.max(), s0, period], maxfev=5000)
    except (RuntimeError, ValueError):
        return np.ones_like(m)
    var = width**2 - period**2 / 12.0
    if not np.isfinite(var) or var < period**2:
        return np.ones_like(m)
    env = np.exp(-0.5 * (s - centre) ** 2 / var)
    return np.maximum(env, 1e-300)


def fit_principal_fringes(
    jsi: JsiRecord,
    d: int,
    *,
    min_prominence: float = 0.25,
    min_significance: float = 10.0,
) -> FringeModel:
    """Fit three equally spaced diagonal Gaussians to the principal fringes.

    The separation is fitted freely, rounded to the nearest multiple of ``d``
    and the remaining parameters are re-fitted with it held fixed.

    Raises
    ------
    FitError
        Fewer than three prominent fringes, non-convergence, or fringe
        amplitudes not significant at ``min_significance`` standard errors.
    """
    m = anti_diagonal_marginal(jsi.counts)
    if m.sum() <= 0:
        raise FitError("JSI has no counts")
    s0, period, smooth = _initial_guess(m, min_prominence)
    s = np.arange(m.size, dtype=float)
    sigma = np.sqrt(np.maximum(m, 1.0))
    envelope = _envelope_estimate(m, s0, period)
    m, sigma = m / envelope, sigma / envelope
    smooth = ndimage.gaussian_filter1d(m, _smoothing_width(m))
    lo, hi = max(0, int(s0 - 1.6 * period)), min(m.size, int(s0 + 1.6 * period) + 1)
    if hi - lo < 3 * period:
        raise FitError("three full fringe periods do not fit inside the recorded grid")
    win = slice(lo, hi)
    bg0 = float(np.percentile(m[win], 5))
    amps = [max(smooth[int(round(s0 + k * period))] - bg0, 1.0) for k in (-1, 0, 1)]
    w0 = period / (3.0 * d)
    p0 = [s0, period, *amps, w0, w0, w0, bg0]
    lower = [s0 - period / 4, 0.7 * period, 0, 0, 0, 0.3, 0.3, 0.3, -np.inf]
    upper = [s0 + period / 4, 1.3 * period, np.inf, np.inf, np.inf, period / 4, period / 4, period / 4, np.inf]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            popt, _ = optimize.curve_fit(
                _three_gaussians, s[win], m[win], p0=p0, sigma=sigma[win], bounds=(lower, upper), maxfev=20000
            )
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"free fringe fit did not converge: {exc}") from exc
    raw_period = float(popt[1])
    N = d * max(1, int(round(raw_period / d)))

    def fixed(s_, s0_, a0, a1, a2, w0_, w1, w2, bg):
        return _three_gaussians(s_, s0_, N, a0, a1, a2, w0_, w1, w2, bg)

    p1 = [popt[0], *popt[2:]]
    lower1 = [lower[0], *lower[2:]]
    upper1 = [upper[0], *upper[2:]]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            popt1, pcov1 = optimize.curve_fit(
                fixed, s[win], m[win], p0=p1, sigma=sigma[win], absolute_sigma=True, bounds=(lower1, upper1), maxfev=20000
            )
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"constrained fringe fit did not converge: {exc}") from exc
    perr = np.sqrt(np.clip(np.diag(pcov1), 0, np.inf))
    amps, amp_err = popt1[1:4], perr[1:4]
    resid = (m[win] - fixed(s[win], *popt1)) / sigma[win]
    diagnostics = {
        "window": [lo, hi],
        "raw_period": raw_period,
        "reduced_chi2": float(np.sum(resid**2) / max(1, resid.size - popt1.size)),
        "amplitude_significance": [float(a / e) if e > 0 else math.inf for a, e in zip(amps, amp_err)],
    }
    if not np.all(np.isfinite(popt1)) or np.any(amps <= min_significance * amp_err):
        raise FitError("fringe amplitudes are not significant above the background", diagnostics)
    if abs(raw_period - N) > 0.1 * N:
        raise FitError(f"fitted period {raw_period:.2f} disagrees with constrained {N}", diagnostics)
    log.debug("fringe fit: period %.3f -> %d, offset %.3f", raw_period, N, popt1[0])
    return FringeModel(
        d=d,
        period_bins=N,
        offset_bins=float(popt1[0]),
        amplitudes=tuple(float(a) for a in amps),
        widths=tuple(float(w) for w in popt1[4:7]),
        background=float(popt1[7]),
        raw_period=raw_period,
        offset_error=float(perr[0]),
        diagnostics=diagnostics,
    )


def model_from_truth(jsi: JsiRecord) -> FringeModel:
    """FringeModel built from a synthetic record's generating parameters."""
    truth = jsi.meta.get("truth")
    if not truth:
        raise CalibrationError("record carries no synthesis ground truth")
    d, M = int(truth["d"]), int(truth["M"])
    return FringeModel(
        d=d,
        period_bins=d * M,
        offset_bins=float(truth["offset_bins"]),
        amplitudes=(math.nan,) * 3,
        widths=(math.nan,) * 3,
        background=math.nan,
        raw_period=float(d * M),
        offset_error=0.0,
        diagnostics={"source": "synthesis ground truth"},
    )


@dataclass(frozen=True)
class CalibratedCounts:
    """Detector counts with every row/column assigned an unwrapped grid index.

    Row ``r`` has Alice grid index ``r - alice_shift`` (phase ``index * 2*pi/N``);
    column ``c`` has Bob grid index ``c - bob_shift`` (phase
    ``index * 2*pi/N - (2*pi/d)/4``).
    """

    counts: np.ndarray
    scenario: Scenario
    alice_shift: int
    bob_shift: int
    residual_bins: float = 0.0

    @property
    def alice_index(self) -> np.ndarray:
        return np.arange(self.counts.shape[0]) - self.alice_shift

    @property
    def bob_index(self) -> np.ndarray:
        return np.arange(self.counts.shape[1]) - self.bob_shift

    @property
    def alice_phase(self) -> np.ndarray:
        return self.alice_index * self.scenario.bin_width

    @property
    def bob_phase(self) -> np.ndarray:
        return self.bob_index * self.scenario.bin_width - quarter_step(self.scenario.d)

    def complete_cells(self) -> tuple[range, range]:
        """Cell numbers (floor(index / N)) fully contained on each axis."""
        N = self.scenario.N

        def cells(first_index, n):
            k_lo = -((-first_index) // N)  # ceil
            k_hi = (first_index + n) // N  # exclusive
            return range(k_lo, k_hi)

        return cells(-self.alice_shift, self.counts.shape[0]), cells(-self.bob_shift, self.counts.shape[1])


def _best_tiling(counts: np.ndarray, N: int, index_sum: int) -> int:
    """Alice shift in ``[0, N)`` whose whole-cell tiling keeps the most counts."""
    n_a, n_b = counts.shape
    cum = np.zeros((n_a + 1, n_b + 1))
    cum[1:, 1:] = np.cumsum(np.cumsum(counts, axis=0), axis=1)
    best, best_mass = 0, -1.0
    for shift_a in range(N):
        shift_b = (index_sum - shift_a) % N
        ka, kb = (n_a - shift_a) // N, (n_b - shift_b) // N
        if ka < 1 or kb < 1:
            continue
        r1, c1 = shift_a + ka * N, shift_b + kb * N
        mass = cum[r1, c1] - cum[shift_a, c1] - cum[r1, shift_b] + cum[shift_a, shift_b]
        if mass > best_mass:
            best, best_mass = shift_a, mass
    return best


def phase_calibrate(jsi: JsiRecord, model: FringeModel, scenario: Scenario) -> CalibratedCounts:
    """Assign grid indices so principal fringe maxima sit at ``phi_a + phi_b = 0 (mod 2*pi)``.

    Only the sum of the two axis origins is fixed by the fringes; the split
    is chosen to maximise the counts inside complete 2*pi cells.
    """
    if model.period_bins != scenario.N or model.d != scenario.d:
        raise CalibrationError(
            f"fringe model (d={model.d}, N={model.period_bins}) does not match scenario "
            f"(d={scenario.d}, N={scenario.N})"
        )
    N = scenario.N
    # fringe at r + c = alice_shift + bob_shift + M/4
    target = model.offset_bins - scenario.M / 4.0
    index_sum = int(math.floor(target + 0.5))
    residual = target - index_sum
    if abs(residual) > 0.25:
        log.warning("fringe offset is %.2f bins from the lattice; phases are off by up to half a bin", residual)
    shift_a = _best_tiling(np.asarray(jsi.counts, dtype=float), N, index_sum)
    shift_b = (index_sum - shift_a) % N
    return CalibratedCounts(np.asarray(jsi.counts), scenario, shift_a, shift_b, residual)


@dataclass(frozen=True)
class WrapResult:
    wrapped: WrappedDistribution
    cells: tuple[int, int]
    included_counts: int
    excluded_counts: int


def wrap(calibrated: CalibratedCounts, scenario: Scenario | None = None) -> WrapResult:
    """Sum all complete 2*pi x 2*pi cells into one N x N count matrix."""
    scenario = scenario or calibrated.scenario
    if scenario != calibrated.scenario:
        raise WrapError("scenario does not match the calibration")
    N = scenario.N
    cells_a, cells_b = calibrated.complete_cells()
    if len(cells_a) < 1 or len(cells_b) < 1:
        raise WrapError("grid holds no complete 2*pi cell on at least one axis")
    r_start = calibrated.alice_shift + cells_a.start * N
    c_start = calibrated.bob_shift + cells_b.start * N
    block = np.asarray(calibrated.counts)[r_start : r_start + len(cells_a) * N, c_start : c_start + len(cells_b) * N]
    block = block.astype(np.int64)
    # fixed reduction order: cells along Alice, then Bob
    wrapped = block.reshape(len(cells_a), N, len(cells_b), N).sum(axis=0).sum(axis=1)
    included = int(block.sum())
    total = int(np.asarray(calibrated.counts, dtype=np.int64).sum())
    return WrapResult(
        WrappedDistribution(wrapped, scenario, "counts"),
        (len(cells_a), len(cells_b)),
        included,
        total - included,
    )


class NormalizationError(ValueError):
    pass


def normalize(wrapped: WrappedDistribution, scenario: Scenario | None = None) -> ConditionalProbabilities:
    """Divide every ``(x, y)`` block by its own total, giving ``P(a, b | x, y)``."""
    scenario = scenario or wrapped.scenario
    if wrapped.kind != "counts":
        raise NormalizationError("normalize expects a counts distribution")
    t = wrapped.blocks()
    totals = t.sum(axis=(0, 1))
    empty = np.argwhere(totals <= 0)
    if empty.size:
        x, y = empty[0]
        raise NormalizationError(f"block (x={x}, y={y}) has no counts; P(a,b|x,y) is undefined")
    M = scenario.M
    return ConditionalProbabilities(t / totals, tuple(range(M)), tuple(range(M)), totals)


def jsi_to_probabilities(jsi: JsiRecord, scenario: Scenario, model: FringeModel | None = None):
    """Fit (unless ``model`` is given), calibrate, wrap and normalise in one call."""
    model = model or fit_principal_fringes(jsi, scenario.d)
    cal = phase_calibrate(jsi, model, scenario)
    res = wrap(cal)
    return normalize(res.wrapped), res, model, cal


def fitted_scenario(model: FringeModel) -> Scenario:
    """Scenario implied by a fit (raises if the implied M is odd)."""
    return Scenario(model.d, model.M)

