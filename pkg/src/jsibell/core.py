"""Scenario descriptors, phase lattices and the phase/outcome/basis index algebra.

Alice's grid index ``i`` packs outcome and basis as ``i = a*M + x`` so that the
bin centre sits at ``(2*pi/d) * (a + x/M)``.  Bob's index ``j = mod(-b, d)*M + y``
sits at ``(2*pi/d) * (mod(-b, d) + y/M - 1/4)``; the quarter step is carried by
``PhaseGrid.bob_origin`` so that M need not be a multiple of 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

TWO_PI = 2.0 * math.pi

MAX_D = 16
MAX_M = 256

Party = Literal["alice", "bob"]


class ScenarioError(ValueError):
    """Raised for invalid scenario parameters or out-of-range indices."""


@dataclass(frozen=True)
class Scenario:
    """``d`` outcomes from each of ``M`` bases, ``N = M*d`` outcomes per 2*pi."""

    d: int
    M: int

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or not isinstance(self.M, (int, np.integer)):
            raise ScenarioError("d and M must be integers")
        if not 2 <= self.d <= MAX_D:
            raise ScenarioError(f"d={self.d} outside supported range [2, {MAX_D}]")
        if not 2 <= self.M <= MAX_M:
            raise ScenarioError(f"M={self.M} outside supported range [2, {MAX_M}]")
        if self.M % 2:
            raise ScenarioError(
                f"M={self.M} is odd; the CGLMP bases need x = M/2 (alpha = 1/2) "
                "and y = M/2 (beta = +1/4), so M must be even"
            )

    @property
    def N(self) -> int:
        return self.M * self.d

    @property
    def bin_width(self) -> float:
        return TWO_PI / self.N


@dataclass(frozen=True)
class PhaseGrid:
    """Uniform phase lattice of spacing ``2*pi/N`` on both axes.

    ``alice_origin`` / ``bob_origin`` are the phases of the centres of grid
    index 0.  The default Bob origin is the quarter step ``-(2*pi/d)/4``.
    """

    scenario: Scenario
    alice_origin: float = 0.0
    bob_origin: float | None = None
    periods_covered: int = 1

    def __post_init__(self):
        if self.bob_origin is None:
            object.__setattr__(self, "bob_origin", -quarter_step(self.scenario.d))
        if self.periods_covered < 1:
            raise ScenarioError("periods_covered must be >= 1")
        for name in ("alice_origin", "bob_origin"):
            if not math.isfinite(getattr(self, name)):
                raise ScenarioError(f"{name} must be finite")

    @property
    def bin_width(self) -> float:
        return self.scenario.bin_width

    def alice_centers(self) -> np.ndarray:
        """Bin centres of one 2*pi cell on Alice's axis."""
        return self.alice_origin + np.arange(self.scenario.N) * self.bin_width

    def bob_centers(self) -> np.ndarray:
        return self.bob_origin + np.arange(self.scenario.N) * self.bin_width


def quarter_step(d: int) -> float:
    """The constant ``(2*pi/d) * 1/4`` subtracted from Bob's phases."""
    return TWO_PI / d / 4.0


def phase_from_frequency(delta_nu, delta_t):
    """Phase ``2*pi * delta_nu * delta_t`` for an ordinary-frequency offset in Hz.

    Parameters
    ----------
    delta_nu : float or array_like
        Frequency offset from the reference, in Hz.
    delta_t : float
        Time-bin spacing in seconds.
    """
    delta_nu = np.asarray(delta_nu, dtype=float)
    if not np.all(np.isfinite(delta_nu)) or not math.isfinite(delta_t):
        raise ValueError("phase_from_frequency needs finite inputs")
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    phi = TWO_PI * delta_nu * delta_t
    return float(phi) if phi.ndim == 0 else phi


def labels_from_grid_index(i: int, scenario: Scenario, party: Party = "alice") -> tuple[int, int]:
    """Map a grid index in ``[0, N)`` to ``(outcome, basis)``."""
    N = scenario.N
    if not 0 <= i < N:
        raise ScenarioError(f"grid index {i} out of range [0, {N})")
    block, basis = divmod(int(i), scenario.M)
    if party == "alice":
        return block, basis
    if party == "bob":
        return (-block) % scenario.d, basis
    raise ScenarioError(f"unknown party {party!r}")


def grid_index_from_labels(outcome: int, basis: int, scenario: Scenario, party: Party = "alice") -> int:
    """Inverse of :func:`labels_from_grid_index`."""
    if not 0 <= outcome < scenario.d:
        raise ScenarioError(f"outcome {outcome} out of range [0, {scenario.d})")
    if not 0 <= basis < scenario.M:
        raise ScenarioError(f"basis {basis} out of range [0, {scenario.M})")
    if party == "alice":
        block = outcome
    elif party == "bob":
        block = (-outcome) % scenario.d
    else:
        raise ScenarioError(f"unknown party {party!r}")
    return block * scenario.M + basis


def label_phase(outcome: int, basis: int, scenario: Scenario, party: Party = "alice") -> float:
    """Measurement phase attached to an (outcome, basis) label."""
    d, M = scenario.d, scenario.M
    if party == "alice":
        return TWO_PI / d * (outcome + basis / M)
    return TWO_PI / d * ((-outcome) % d + basis / M - 0.25)


def cglmp_basis_indices(scenario: Scenario) -> tuple[tuple[int, int], tuple[int, int]]:
    """Grid bases realising the two CGLMP settings of each party.

    Returns ``(x_pair, y_pair)`` in CGLMP setting order: Alice
    ``(alpha=0, alpha=1/2) -> (0, M/2)``, Bob ``(beta=+1/4, beta=-1/4) -> (M/2, 0)``.
    """
    M = scenario.M
    if M % 2:
        raise ScenarioError(f"M={M} is odd; x = M/2 is not a grid basis")
    return (0, M // 2), (M // 2, 0)


def cglmp_phase_offsets(scenario: Scenario) -> tuple[tuple[float, float], tuple[float, float]]:
    """``(alpha_1, alpha_2), (beta_1, beta_2)`` realised by :func:`cglmp_basis_indices`."""
    xs, ys = cglmp_basis_indices(scenario)
    M = scenario.M
    return tuple(x / M for x in xs), tuple(y / M - 0.25 for y in ys)


@dataclass(frozen=True)
class JsiRecord:
    """A joint spectral intensity: integer counts on two monotone physical axes.

    ``counts[r, c]`` is indexed by Alice (row) and Bob (column) detector bins.
    ``meta`` holds instrument metadata (``delta_t``, ``sigma_t``, ``jitter_sigma``
    in seconds; ``dispersion_ps_per_nm``, ``lambda_ref_nm``) and, for synthetic
    records, the ground truth used to generate them.
    """

    counts: np.ndarray
    axis_a: np.ndarray
    axis_b: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        counts = np.array(self.counts)
        if counts.ndim != 2:
            raise ValueError("counts must be a 2D matrix")
        if counts.dtype.kind == "f":
            if not np.all(np.isfinite(counts)) or np.any(counts != np.round(counts)):
                raise ValueError("counts must be integral")
            counts = counts.astype(np.int64)
        if counts.dtype.kind not in "iu":
            raise ValueError("counts must be integers")
        if np.any(counts < 0):
            r, c = np.argwhere(counts < 0)[0]
            raise ValueError(f"negative count at row {r}, column {c}")
        axis_a = np.array(self.axis_a, dtype=float)
        axis_b = np.array(self.axis_b, dtype=float)
        if axis_a.shape != (counts.shape[0],) or axis_b.shape != (counts.shape[1],):
            raise ValueError(
                f"axis lengths {axis_a.shape}, {axis_b.shape} do not match counts shape {counts.shape}"
            )
        for name, ax in (("axis_a", axis_a), ("axis_b", axis_b)):
            if not strictly_monotone(ax):
                raise ValueError(f"{name} is not strictly monotone")
        counts.setflags(write=False)
        axis_a.setflags(write=False)
        axis_b.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "axis_a", axis_a)
        object.__setattr__(self, "axis_b", axis_b)
        object.__setattr__(self, "meta", dict(self.meta))


def strictly_monotone(ax: np.ndarray) -> bool:
    if ax.size < 2:
        return ax.size == 1 and bool(np.isfinite(ax).all())
    step = np.diff(ax)
    return bool(np.isfinite(ax).all() and (np.all(step > 0) or np.all(step < 0)))


@dataclass(frozen=True)
class WrappedDistribution:
    """N x N values over one 2*pi x 2*pi cell, indexed by Alice/Bob grid index."""

    values: np.ndarray
    scenario: Scenario
    kind: Literal["counts", "probabilities"] = "counts"

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        N = self.scenario.N
        if values.shape != (N, N):
            raise ValueError(f"wrapped values must be {N}x{N}, got {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("wrapped values must be finite and non-negative")
        if self.kind not in ("counts", "probabilities"):
            raise ValueError(f"unknown kind {self.kind!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def blocks(self) -> np.ndarray:
        """Values rearranged as ``[a, b, x, y]`` with Bob's outcome relabelled."""
        return grid_to_tensor(self.values, self.scenario)


def grid_to_tensor(values: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Rearrange an ``N x N`` grid matrix into a ``(d, d, M, M)`` tensor ``[a, b, x, y]``."""
    d, M = scenario.d, scenario.M
    t = np.asarray(values).reshape(d, M, d, M)  # [a, x, block_b, y]
    t = t.transpose(0, 2, 1, 3)  # [a, block_b, x, y]
    return t[:, (-np.arange(d)) % d]  # block_b = mod(-b, d)


def tensor_to_grid(tensor: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Inverse of :func:`grid_to_tensor`."""
    d, M = scenario.d, scenario.M
    t = np.asarray(tensor)[:, (-np.arange(d)) % d]
    return t.transpose(0, 2, 1, 3).reshape(d * M, d * M)


@dataclass(frozen=True)
class ConditionalProbabilities:
    """``P(a, b | x, y)`` stored as a ``(d, d, mx, my)`` tensor.

    ``x_settings`` / ``y_settings`` record which grid bases the retained setting
    slots came from (informational).  ``block_totals`` keeps the raw count of
    each (x, y) block when the tensor came from data.
    """

    tensor: np.ndarray
    x_settings: tuple = ()
    y_settings: tuple = ()
    block_totals: np.ndarray | None = None
    atol: float = 1e-9
    allow_negative: bool = False

    def __post_init__(self):
        t = np.array(self.tensor, dtype=float)
        if t.ndim != 4 or t.shape[0] != t.shape[1]:
            raise ValueError(f"expected a (d, d, mx, my) tensor, got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("probabilities must be finite")
        if not self.allow_negative and (np.any(t < -self.atol) or np.any(t > 1 + self.atol)):
            raise ValueError("probabilities must lie in [0, 1]")
        sums = t.sum(axis=(0, 1))
        bad = np.argwhere(np.abs(sums - 1.0) > self.atol)
        if bad.size:
            x, y = bad[0]
            raise ValueError(f"block (x={x}, y={y}) sums to {sums[x, y]!r}, not 1")
        t.setflags(write=False)
        object.__setattr__(self, "tensor", t)
        object.__setattr__(self, "x_settings", tuple(self.x_settings) or tuple(range(t.shape[2])))
        object.__setattr__(self, "y_settings", tuple(self.y_settings) or tuple(range(t.shape[3])))

    @property
    def d(self) -> int:
        return self.tensor.shape[0]

    @property
    def settings(self) -> tuple[int, int]:
        return self.tensor.shape[2], self.tensor.shape[3]

    def select(self, xs, ys) -> "ConditionalProbabilities":
        """Keep the setting slots ``xs`` (Alice) and ``ys`` (Bob), in that order."""
        xs, ys = list(xs), list(ys)
        totals = None if self.block_totals is None else self.block_totals[np.ix_(xs, ys)]
        return ConditionalProbabilities(
            self.tensor[:, :, xs][:, :, :, ys],
            tuple(self.x_settings[i] for i in xs),
            tuple(self.y_settings[i] for i in ys),
            totals,
            self.atol,
            self.allow_negative,
        )

    def select_bases(self, xs, ys) -> "ConditionalProbabilities":
        """Like :meth:`select` but addressed by grid basis index rather than slot."""
        return self.select([self.x_settings.index(x) for x in xs], [self.y_settings.index(y) for y in ys])


@dataclass(frozen=True)
class BellInequality:
    """``sum s[a, b, x, y] P(a, b | x, y) <= local_bound``."""

    coefficients: np.ndarray
    local_bound: float
    label: str = ""

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        if c.ndim != 4 or c.shape[0] != c.shape[1]:
            raise ValueError(f"coefficients must be a (d, d, mx, my) tensor, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "local_bound", float(self.local_bound))

    def value(self, P) -> float:
        t = P.tensor if isinstance(P, ConditionalProbabilities) else np.asarray(P)
        return float(np.sum(self.coefficients * t))

    def violation(self, P) -> float:
        return self.value(P) - self.local_bound
