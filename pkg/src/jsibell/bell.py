"""CGLMP functional, theoretical values, optimal states and noise tolerance.

Setting slots follow the CGLMP convention: Alice slot 0/1 is ``alpha = 0 / 1/2``
and Bob slot 0/1 is ``beta = +1/4 / -1/4``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Literal, NamedTuple

import numpy as np

from .core import (
    TWO_PI,
    BellInequality,
    ConditionalProbabilities,
    PhaseGrid,
    Scenario,
    cglmp_basis_indices,
)
from .simulate import StateCoefficients, as_state, cglmp_phase_probabilities, jpd_binned

LOCAL_BOUND = 2.0

Direction = Literal["a=b+k", "b=a+k"]


@dataclass
class BellResult:
    value: float
    d: int
    sigma: float = 0.0
    settings: tuple = ()


def _tensor(P) -> np.ndarray:
    t = P.tensor if isinstance(P, ConditionalProbabilities) else np.asarray(P, dtype=float)
    if t.ndim != 4 or t.shape[0] != t.shape[1]:
        raise ValueError(f"expected a (d, d, mx, my) tensor, got shape {t.shape}")
    return t


def cglmp_term(P, x: int, y: int, k: int, direction: Direction = "a=b+k") -> float:
    """``P(a_x = b_y + k)`` or ``P(b_y = a_x + k)``, all arithmetic mod ``d``.

    ``k`` may be any integer; the CGLMP sum uses shifts from ``-floor(d/2)`` to
    ``floor(d/2)``.
    """
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)):
        raise ValueError(f"shift k must be an integer, got {k!r}")
    t = _tensor(P)
    d = t.shape[0]
    a = np.arange(d)[:, None]
    b = np.arange(d)[None, :]
    if direction == "a=b+k":
        mask = (a - b - k) % d == 0
    elif direction == "b=a+k":
        mask = (b - a - k) % d == 0
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return float(np.sum(t[:, :, x, y] * mask))


@lru_cache(maxsize=None)
def cglmp_weights(d: int) -> tuple[float, ...]:
    """``1 - 2k/(d-1)`` for ``k = 0 .. floor(d/2) - 1``, from exact rationals."""
    return tuple(float(1 - Fraction(2 * k, d - 1)) for k in range(d // 2))


def cglmp_value(P, d: int | None = None) -> float:
    """The CGLMP expression ``I_d`` for a two-setting ``P(a, b | x, y)``."""
    t = _tensor(P)
    if d is not None and t.shape[0] != d:
        raise ValueError(f"distribution has {t.shape[0]} outcomes, expected d={d}")
    if t.shape[2:] != (2, 2):
        raise ValueError(f"CGLMP needs exactly 2 settings per party, got {t.shape[2:]}")
    d = t.shape[0]
    total = 0.0
    for k, w in enumerate(cglmp_weights(d)):
        plus = (
            cglmp_term(t, 0, 0, k, "a=b+k")
            + cglmp_term(t, 1, 0, k + 1, "b=a+k")
            + cglmp_term(t, 1, 1, k, "a=b+k")
            + cglmp_term(t, 0, 1, k, "b=a+k")
        )
        minus = (
            cglmp_term(t, 0, 0, -k - 1, "a=b+k")
            + cglmp_term(t, 1, 0, -k, "b=a+k")
            + cglmp_term(t, 1, 1, -k - 1, "a=b+k")
            + cglmp_term(t, 0, 1, -k - 1, "b=a+k")
        )
        total += w * (plus - minus)
    return float(total)


@lru_cache(maxsize=None)
def _cglmp_coefficients(d: int) -> np.ndarray:
    S = np.zeros((d, d, 2, 2))
    a = np.arange(d)[:, None]
    b = np.arange(d)[None, :]

    def eq(lhs, rhs):
        return ((lhs - rhs) % d == 0).astype(float)

    for k, w in enumerate(cglmp_weights(d)):
        S[:, :, 0, 0] += w * (eq(a, b + k) - eq(a, b - k - 1))
        S[:, :, 1, 0] += w * (eq(b, a + k + 1) - eq(b, a - k))
        S[:, :, 1, 1] += w * (eq(a, b + k) - eq(a, b - k - 1))
        S[:, :, 0, 1] += w * (eq(b, a + k) - eq(b, a - k - 1))
    S.setflags(write=False)
    return S


def cglmp_inequality(d: int) -> BellInequality:
    """CGLMP as a coefficient tensor with local bound 2."""
    return BellInequality(_cglmp_coefficients(d), LOCAL_BOUND, f"CGLMP d={d}")


def theoretical_cglmp(d: int, lam=None) -> float:
    """``I_d`` of a Schmidt-diagonal state at the exact CGLMP phases."""
    return cglmp_value(cglmp_phase_probabilities(as_state(lam, d), d))


def cglmp_probabilities(P: ConditionalProbabilities, scenario: Scenario) -> ConditionalProbabilities:
    """Restrict an all-bases ``P(a, b | x, y)`` to the CGLMP bases, in CGLMP slot order."""
    xs, ys = cglmp_basis_indices(scenario)
    return P.select_bases(xs, ys)


def binned_cglmp(scenario: Scenario, lam=None, grid: PhaseGrid | None = None, order: int = 8) -> float:
    """``I_d`` of the bin-integrated distribution at the CGLMP bases."""
    P = jpd_binned(scenario, grid, lam, order=order)
    xs, ys = cglmp_basis_indices(scenario)
    return cglmp_value(P.blocks()[:, :, list(xs)][:, :, :, list(ys)])


def measurement_vectors(d: int) -> tuple[np.ndarray, np.ndarray]:
    """CGLMP measurement vectors ``A[x, a]`` and ``B[y, b]`` as rows of length ``d``."""
    j = np.arange(d)
    alphas, betas = (0.0, 0.5), (0.25, -0.25)
    A = np.empty((2, d, d), dtype=complex)
    B = np.empty((2, d, d), dtype=complex)
    for x, alpha in enumerate(alphas):
        for a in range(d):
            A[x, a] = np.exp(-1j * TWO_PI / d * j * (a + alpha)) / math.sqrt(d)
    for y, beta in enumerate(betas):
        for b in range(d):
            B[y, b] = np.exp(-1j * TWO_PI / d * j * ((-b) % d + beta)) / math.sqrt(d)
    return A, B


def bell_operator(d: int) -> np.ndarray:
    """``sum s[a,b,x,y] |A_a|x><A_a|x| (x) |B_b|y><B_b|y|`` as a real symmetric d^2 x d^2 matrix."""
    S = _cglmp_coefficients(d)
    A, B = measurement_vectors(d)
    op = np.zeros((d * d, d * d), dtype=complex)
    for x in range(2):
        for y in range(2):
            for a in range(d):
                for b in range(d):
                    if S[a, b, x, y] == 0.0:
                        continue
                    v = np.kron(A[x, a], B[y, b])
                    op += S[a, b, x, y] * np.outer(v, v.conj())
    if np.abs(op.imag).max() > 1e-10:
        raise RuntimeError("Bell operator is unexpectedly complex")
    op = op.real
    return 0.5 * (op + op.T)


class ConvergenceError(RuntimeError):
    pass


def power_iteration(op: np.ndarray, start: np.ndarray, tol: float = 1e-10, max_iter: int = 200_000):
    """Largest eigenpair of a symmetric matrix by shifted power iteration.

    The shift (max absolute row sum) makes the spectrum non-negative so the
    algebraically largest eigenvalue dominates.
    """
    shift = float(np.abs(op).sum(axis=1).max())
    shifted = op + shift * np.eye(op.shape[0])
    v = start / np.linalg.norm(start)
    for it in range(1, max_iter + 1):
        w = shifted @ v
        v = w / np.linalg.norm(w)
        ov = op @ v
        lam = float(v @ ov)
        if np.linalg.norm(ov - lam * v) < tol:
            return lam, v, it
    raise ConvergenceError(f"power iteration did not reach {tol:g} in {max_iter} steps")


def optimize_state(d: int, tol: float = 1e-10) -> tuple[StateCoefficients, float]:
    """Schmidt coefficients maximising ``I_d`` for the fixed CGLMP measurements."""
    if not 2 <= d <= 16:
        raise ValueError("optimize_state supports 2 <= d <= 16")
    op = bell_operator(d)
    start = np.eye(d).ravel() / math.sqrt(d)
    value, vec, _ = power_iteration(op, start, tol)
    mat = vec.reshape(d, d)
    off = mat - np.diag(np.diag(mat))
    if np.abs(off).max() > 1e-6:
        raise ConvergenceError("top eigenvector is not Schmidt-diagonal in the computational basis")
    diag = np.diag(mat)
    diag = diag * np.sign(diag.sum())
    if np.any(diag < -1e-8):
        raise ConvergenceError("top eigenvector has mixed-sign Schmidt coefficients")
    return StateCoefficients.from_unnormalized(np.clip(diag, 0.0, None)), value


class Tolerance(NamedTuple):
    fraction: float
    violates: bool


def noise_tolerance(I_d: float) -> Tolerance:
    """White-noise tolerance ``1 - 2/I_d``; white noise scores 0 on CGLMP."""
    if I_d <= LOCAL_BOUND:
        return Tolerance(0.0, False)
    return Tolerance(1.0 - LOCAL_BOUND / I_d, True)


# Multi-outcome and binarised tolerances quoted from prior work (display only).
_REFERENCE_TOLERANCES = {8: (0.355, 0.149)}
REFERENCE_SOURCE = "from cited prior work, not computed here"


def binarised_reference(d: int) -> dict:
    """Display constants for the binarised-measurement comparison curve.

    ``binarised`` is ``None`` when no reference value is stored for ``d``.
    """
    if d == 2:
        multi = noise_tolerance(theoretical_cglmp(2)).fraction
        return {"d": 2, "multi": multi, "binarised": multi, "source": "two outcomes: no binarisation gap"}
    if d in _REFERENCE_TOLERANCES:
        multi, binar = _REFERENCE_TOLERANCES[d]
        return {"d": d, "multi": multi, "binarised": binar, "source": REFERENCE_SOURCE}
    return {"d": d, "multi": None, "binarised": None, "source": "unavailable"}
