"""Finite-statistics tools: settings probabilities, score models, McDiarmid p-values, Poisson bootstrap."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import xlogy

from .core import BellInequality, Scenario, WrappedDistribution
from .wrapfit import normalize

LOG10_E = math.log10(math.e)


class DegenerateScoreError(ValueError):
    pass


class SettingsProbability(NamedTuple):
    probabilities: np.ndarray
    empty_blocks: np.ndarray  # boolean mask of (x, y) blocks without counts


def _counts_tensor(counts) -> np.ndarray:
    t = np.asarray(counts, dtype=float)
    if t.ndim != 4 or t.shape[0] != t.shape[1]:
        raise ValueError(f"counts must be a (d, d, mx, my) tensor, got shape {t.shape}")
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("counts must be finite and non-negative")
    return t


def settings_probability(counts) -> SettingsProbability:
    """``P(x, y)`` estimated as each block's share of all coincidences."""
    t = _counts_tensor(counts)
    blocks = t.sum(axis=(0, 1))
    total = blocks.sum()
    if total <= 0:
        raise ValueError("no counts: settings probabilities undefined")
    return SettingsProbability(blocks / total, blocks == 0)


@dataclass(frozen=True)
class ScoreModel:
    """Per-round scores ``s[a,b,x,y] = coeff / P(x,y)`` and the observed totals."""

    scores: np.ndarray
    s_max: float
    s_min: float
    beta_L: float
    n: float
    c: float

    @property
    def mean_score(self) -> float:
        return self.c / self.n


def score_model(inequality: BellInequality, p_xy, counts) -> ScoreModel:
    """Rewrite a Bell functional as an n-round game with per-round scores."""
    t = _counts_tensor(counts)
    coeffs = np.asarray(inequality.coefficients, dtype=float)
    if coeffs.shape != t.shape:
        raise ValueError(f"coefficients {coeffs.shape} and counts {t.shape} differ in shape")
    p_xy = np.asarray(p_xy, dtype=float)
    if p_xy.shape != t.shape[2:]:
        raise ValueError("settings probabilities do not match the counts' setting shape")
    used = np.any(coeffs != 0, axis=(0, 1))
    if np.any(used & (p_xy <= 0)):
        x, y = np.argwhere(used & (p_xy <= 0))[0]
        raise ValueError(f"setting pair (x={x}, y={y}) has zero probability but nonzero coefficients")
    safe = np.where(p_xy > 0, p_xy, 1.0)
    scores = np.where(used[None, None], coeffs / safe[None, None], 0.0)
    s_max, s_min = float(scores.max()), float(scores.min())
    if s_max == s_min:
        raise DegenerateScoreError(f"all scores equal ({s_max}); the p-value bound is undefined")
    n = float(t.sum())
    if n <= 0:
        raise ValueError("no counts")
    c = math.fsum((t * scores).ravel())
    return ScoreModel(scores, s_max, s_min, inequality.local_bound, n, c)


class PValue(NamedTuple):
    log10_p: float
    p: float  # underflows to 0.0 below ~1e-308; log10_p stays exact


def mcdiarmid_pvalue(model: ScoreModel) -> PValue:
    """McDiarmid bound on the probability that a local model scores ``c/n`` or more.

    Evaluated in log space as ``-n * KL(q || q_beta)`` for the Bernoulli
    variables ``q = (c/n - s_min)/(s_max - s_min)`` and
    ``q_beta = (beta - s_min)/(s_max - s_min)``.
    """
    span = model.s_max - model.s_min
    if span <= 0:
        raise DegenerateScoreError("s_max == s_min")
    beta = model.beta_L
    if not model.s_min < beta < model.s_max:
        raise DegenerateScoreError(f"local bound {beta} not strictly inside the score range")
    r = model.mean_score
    if r <= beta:
        return PValue(0.0, 1.0)
    r = min(r, model.s_max)
    q = (r - model.s_min) / span
    u = (model.s_max - r) / span
    q_beta = (beta - model.s_min) / span
    u_beta = (model.s_max - beta) / span
    per_round = math.fsum(
        [float(xlogy(u, u_beta)), float(xlogy(q, q_beta)), -float(xlogy(u, u)), -float(xlogy(q, q))]
    )
    log10_p = min(0.0, model.n * per_round * LOG10_E)
    return PValue(log10_p, 10.0**log10_p)


def bell_pvalue(inequality: BellInequality, counts, p_xy=None) -> PValue:
    """Convenience: estimate ``P(x, y)`` from counts (default) and bound the p-value."""
    if p_xy is None:
        p_xy = settings_probability(counts).probabilities
    return mcdiarmid_pvalue(score_model(inequality, p_xy, counts))


class BootstrapResult(NamedTuple):
    sigma: float
    mean: float
    values: np.ndarray


def poisson_bootstrap(
    wrapped: WrappedDistribution,
    scenario: Scenario,
    statistic: Callable,
    R: int = 50,
    seed: int | None = 0,
) -> BootstrapResult:
    """Standard deviation of ``statistic(P)`` over Poisson resamples of the wrapped counts.

    ``statistic`` receives the normalised ``ConditionalProbabilities`` of each
    resample.  Resamples use independent child generators of ``seed``.
    """
    if R < 2:
        raise ValueError("need at least two resamples")
    if wrapped.kind != "counts":
        raise ValueError("bootstrap needs a counts distribution")
    if scenario.N != wrapped.values.shape[0]:
        raise ValueError("scenario does not match the wrapped matrix")
    if wrapped.values.sum() <= 0:
        raise ValueError("all-zero counts: normalisation undefined")
    children = np.random.SeedSequence(seed).spawn(R)
    values = np.empty(R)
    for i, child in enumerate(children):
        sample = np.random.default_rng(child).poisson(wrapped.values)
        P = normalize(WrappedDistribution(sample, scenario, "counts"), scenario)
        values[i] = statistic(P)
    return BootstrapResult(float(np.std(values, ddof=1)), float(values.mean()), values)
