"""Local-hidden-variable analysis: critical visibilities, certificates and projections.

Behaviours are ``(d, d, mx, my)`` tensors ``P(a, b | x, y)`` flattened in C
order.  The local polytope is the convex hull of the deterministic product
behaviours ``[a == f(x)] * [b == g(y)]``.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Literal

import numpy as np
from scipy.optimize import linprog

from .core import BellInequality, ConditionalProbabilities

log = logging.getLogger(__name__)

VERTEX_CAP = 10**7
STRATEGY_CAP = 10**6


class VertexCapError(ValueError):
    pass


class SeparationError(ValueError):
    """No separating hyperplane: the target is local."""


class FWConvergenceError(RuntimeError):
    pass


class NoSignalingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DeterministicStrategy:
    alice_map: tuple[int, ...]
    bob_map: tuple[int, ...]
    d: int

    def __post_init__(self):
        for o in self.alice_map + self.bob_map:
            if not 0 <= o < self.d:
                raise ValueError(f"outcome {o} outside [0, {self.d})")

    def behaviour(self) -> np.ndarray:
        return vertex(self.d, self.alice_map, self.bob_map)


@dataclass
class LhvResult:
    v_crit: float
    v_lower: float
    v_upper: float
    method: Literal["LP-exact", "FW-bounds"]
    closest_local: np.ndarray | None = None
    certificate: BellInequality | None = None
    heuristic: bool = False
    info: dict = field(default_factory=dict)


def _shape(P) -> tuple[int, int, int]:
    t = P.tensor if isinstance(P, ConditionalProbabilities) else np.asarray(P)
    if t.ndim != 4 or t.shape[0] != t.shape[1]:
        raise ValueError(f"expected a (d, d, mx, my) tensor, got {t.shape}")
    return t.shape[0], t.shape[2], t.shape[3]


def _array(P) -> np.ndarray:
    return np.asarray(P.tensor if isinstance(P, ConditionalProbabilities) else P, dtype=float)


def uniform_behaviour(d: int, mx: int, my: int | None = None) -> np.ndarray:
    my = mx if my is None else my
    return np.full((d, d, mx, my), 1.0 / d**2)


def vertex(d: int, alice_map, bob_map) -> np.ndarray:
    mx, my = len(alice_map), len(bob_map)
    v = np.zeros((d, d, mx, my))
    for x, a in enumerate(alice_map):
        for y, b in enumerate(bob_map):
            v[a, b, x, y] = 1.0
    return v


def n_vertices(d: int, mx: int, my: int | None = None) -> int:
    my = mx if my is None else my
    return d**mx * d**my


def enumerate_vertices(d: int, mx: int, my: int | None = None) -> Iterator[np.ndarray]:
    """Yield every deterministic product behaviour exactly once (lazily)."""
    my = mx if my is None else my
    if n_vertices(d, mx, my) > VERTEX_CAP:
        raise VertexCapError(
            f"{n_vertices(d, mx, my)} vertices exceed the enumeration cap {VERTEX_CAP}; "
            "use fw_visibility, whose oracle falls back to heuristic best responses"
        )
    for fa in itertools.product(range(d), repeat=mx):
        for fb in itertools.product(range(d), repeat=my):
            yield vertex(d, fa, fb)


def vertex_matrix(d: int, mx: int, my: int | None = None) -> np.ndarray:
    """All vertices as rows of a ``(n_vertices, d*d*mx*my)`` matrix."""
    my = mx if my is None else my
    n = n_vertices(d, mx, my)
    if n > VERTEX_CAP:
        raise VertexCapError(f"{n} vertices exceed the cap {VERTEX_CAP}")
    fa = np.array(list(itertools.product(range(d), repeat=mx)), dtype=int).reshape(-1, mx)
    fb = np.array(list(itertools.product(range(d), repeat=my)), dtype=int).reshape(-1, my)
    # one-hot per party: Ea[i, a, x] = [fa[i, x] == a]
    Ea = (fa[:, None, :] == np.arange(d)[None, :, None]).astype(float)
    Eb = (fb[:, None, :] == np.arange(d)[None, :, None]).astype(float)
    V = np.einsum("iax,jby->ijabxy", Ea, Eb)
    return V.reshape(n, d * d * mx * my)


def _alice_strategies(d: int, mx: int) -> np.ndarray:
    return np.array(list(itertools.product(range(d), repeat=mx)), dtype=int).reshape(-1, mx)


def best_deterministic(coeffs: np.ndarray, *, maximize: bool = True, restarts: int = 32, seed: int = 0):
    """Optimise ``<coeffs, V>`` over deterministic behaviours.

    Enumerates Alice's ``d**mx`` strategies with Bob's best response in closed
    form, which is exact.  Above ``STRATEGY_CAP`` Alice strategies, alternating
    best responses from ``restarts`` random starts are used instead (heuristic).

    Returns ``(value, alice_map, bob_map, exact)``.
    """
    c = np.asarray(coeffs, dtype=float)
    if not maximize:
        c = -c
    d, _, mx, my = c.shape
    if d**mx <= STRATEGY_CAP:
        fa = _alice_strategies(d, mx)
        # G[i, b, y] = sum_x c[fa[i, x], b, x, y]
        G = np.zeros((fa.shape[0], d, my))
        for x in range(mx):
            G += c[fa[:, x], :, x, :]
        best_b = G.max(axis=1)  # (i, y)
        totals = best_b.sum(axis=1)
        i = int(np.argmax(totals))
        fb = G[i].argmax(axis=0)
        value = float(totals[i])
        exact = True
        alice = tuple(int(a) for a in fa[i])
    else:
        rng = np.random.default_rng(seed)
        value, alice, fb = -math.inf, None, None
        for _ in range(restarts):
            a_map = rng.integers(0, d, mx)
            prev = -math.inf
            while True:
                # Bob best response to a_map, then Alice to Bob
                Gb = sum(c[a_map[x], :, x, :] for x in range(mx))  # (b, y)
                b_map = Gb.argmax(axis=0)
                Ga = sum(c[:, b_map[y], :, y] for y in range(my))  # (a, x)
                a_map = Ga.argmax(axis=0)
                cur = float(Ga.max(axis=0).sum())
                if cur <= prev + 1e-15:
                    break
                prev = cur
            if cur > value:
                value, alice, fb = cur, tuple(int(a) for a in a_map), b_map
        exact = False
    bob = tuple(int(b) for b in fb)
    return (value if maximize else -value), alice, bob, exact


def local_bound(coeffs) -> float:
    """Exact maximum of ``<coeffs, P>`` over local behaviours."""
    c = np.asarray(coeffs, dtype=float)
    d, _, mx, _ = c.shape
    if d**mx > STRATEGY_CAP:
        raise VertexCapError("exact local bound needs Alice's strategies to be enumerable")
    return best_deterministic(c)[0]


def _mixture(P_target, P_noise):
    Pt = _array(P_target)
    Pn = uniform_behaviour(*_shape(Pt)) if P_noise is None else _array(P_noise)
    if Pt.shape != Pn.shape:
        raise ValueError("target and noise distributions differ in shape")
    return Pt, Pn


def lp_visibility(P_target, P_noise=None) -> LhvResult:
    """Exact critical visibility by linear programming over all local vertices.

    Solves ``max v`` s.t. ``v Pt + (1 - v) Pn = sum_l w_l V_l``, ``w >= 0``.
    When ``v < 1`` the equality duals give a Bell inequality separating the
    target; it is returned normalised with an enumeration-verified bound.
    """
    Pt, Pn = _mixture(P_target, P_noise)
    d, mx, my = _shape(Pt)
    if signaling_residual(Pt) > 1e-9:
        warnings.warn(
            "target violates no-signalling, so only v = 0 can be local; project it first "
            "with project_no_signaling",
            NoSignalingWarning,
            stacklevel=2,
        )
    V = vertex_matrix(d, mx, my)
    n_v, dim = V.shape
    diff = (Pt - Pn).ravel()
    A_eq = np.hstack([V.T, -diff[:, None]])
    b_eq = Pn.ravel()
    cost = np.zeros(n_v + 1)
    cost[-1] = -1.0
    bounds = [(0, None)] * n_v + [(0, 1)]
    res = linprog(cost, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP failed: {res.message}")
    v_crit = float(res.x[-1])
    w = res.x[:-1]
    closest = (V.T @ w).reshape(Pt.shape)
    info = {"vertices": n_v, "lp_iterations": res.nit, "signaling": signaling_residual(Pt)}
    cert = None
    if v_crit < 1.0 - 1e-9:
        duals = np.asarray(res.eqlin.marginals).reshape(Pt.shape)
        try:
            cert = extract_inequality(duals, Pt, label=f"LP dual d={d} m=({mx},{my})")
        except SeparationError as exc:
            # a signalling target yields a witness that vanishes on every vertex
            info["certificate_error"] = str(exc)
    return LhvResult(v_crit, v_crit, v_crit, "LP-exact", closest, cert, info=info)


def _normalise(coeffs: np.ndarray) -> np.ndarray:
    """Zero-mean every (x, y) block so the uniform behaviour scores 0."""
    return coeffs - coeffs.mean(axis=(0, 1), keepdims=True)


def extract_inequality(direction, P_target, *, label: str = "", margin: float = 1e-9) -> BellInequality:
    """Turn a separating direction into a normalised Bell inequality.

    Either orientation of ``direction`` is accepted; the one violated by the
    target is kept.  Coefficients are shifted so the uniform behaviour scores
    0 and scaled so the exact local bound equals 2.

    Raises
    ------
    SeparationError
        If neither orientation is violated by ``P_target``.
    """
    Pt = _array(P_target)
    s = _normalise(np.asarray(direction, dtype=float).reshape(Pt.shape))
    for cand in (s, -s):
        bound = local_bound(cand)
        if bound <= 1e-12:
            continue
        scaled = cand * (2.0 / bound)
        ineq = BellInequality(scaled, local_bound(scaled), label)
        if ineq.violation(Pt) > margin:
            return ineq
    raise SeparationError("direction does not separate the target from the local polytope")


@dataclass
class _FWState:
    x: np.ndarray
    active: dict  # key -> (vertex vector, weight)


def _lmo(g: np.ndarray, shape, seed: int):
    _, fa, fb, exact = best_deterministic(g.reshape(shape), maximize=False, seed=seed)
    d = shape[0]
    return (fa, fb), vertex(d, fa, fb).ravel(), exact


def fw_distance(
    p: np.ndarray,
    state: _FWState | None = None,
    *,
    dist_tol: float = 1e-9,
    max_iter: int = 20_000,
    seed: int = 0,
):
    """Pairwise Frank-Wolfe on ``0.5 ||x - p||^2`` over the local polytope.

    Stops when either the gradient hyperplane separates ``p`` (nonlocal) or
    ``||x - p|| < dist_tol`` (local to that tolerance).  Returns
    ``(verdict, state, g, info)`` with verdict ``"nonlocal"`` / ``"local"``.
    """
    shape = p.shape
    pv = p.ravel()
    if state is None:
        key, s, _ = _lmo(-pv, shape, seed)
        state = _FWState(s.copy(), {key: [s, 1.0]})
    x = state.x
    exact_all = True
    for it in range(1, max_iter + 1):
        g = x - pv
        dist2 = float(g @ g)
        if dist2 < dist_tol**2:
            return "local", state, g, {"iterations": it, "distance": math.sqrt(dist2), "exact": exact_all}
        key, s, exact = _lmo(g, shape, seed + it)
        exact_all &= exact
        # <g, s> > <g, p> means {y : <g, y> >= <g, s>} excludes p
        if float(g @ s) - float(g @ pv) > 1e-13 * max(1.0, dist2):
            return "nonlocal", state, g, {"iterations": it, "distance": math.sqrt(dist2), "exact": exact_all}
        # away vertex: worst active one along the gradient
        away_key = max(state.active, key=lambda k: float(g @ state.active[k][0]))
        a_vec, a_w = state.active[away_key]
        direction = s - a_vec
        denom = float(direction @ direction)
        if denom == 0.0:
            return "local", state, g, {"iterations": it, "distance": math.sqrt(dist2), "exact": exact_all}
        gamma = min(max(-float(g @ direction) / denom, 0.0), a_w)
        if gamma <= 0.0:
            continue
        x = x + gamma * direction
        if key in state.active:
            state.active[key][1] += gamma
        else:
            state.active[key] = [s, gamma]
        state.active[away_key][1] -= gamma
        if state.active[away_key][1] <= 1e-15:
            del state.active[away_key]
        state.x = x
    raise FWConvergenceError(f"Frank-Wolfe undecided after {max_iter} iterations")


def fw_visibility(
    P_target,
    P_noise=None,
    tol: float = 1e-4,
    *,
    dist_tol: float = 1e-9,
    max_iter: int = 20_000,
    seed: int = 0,
) -> LhvResult:
    """Bracket the critical visibility by bisection on Frank-Wolfe locality tests.

    ``v_upper`` is certified by a separating hyperplane; ``v_lower`` is the
    largest visibility whose distance to the local polytope fell below
    ``dist_tol``.  The inequality from the final separating gradient is
    returned as the certificate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    Pt, Pn = _mixture(P_target, P_noise)

    def run(v, state):
        return fw_distance(v * Pt + (1 - v) * Pn, state, dist_tol=dist_tol, max_iter=max_iter, seed=seed)

    verdict, state, g, info = run(1.0, None)
    heuristic = not info["exact"]
    if verdict == "local":
        return LhvResult(1.0, 1.0, 1.0, "FW-bounds", state.x.reshape(Pt.shape), None, heuristic, info)
    lo, hi, g_hi = 0.0, 1.0, g
    local_state = None
    iterations = info["iterations"]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        # warm start from the last point found to be local
        start = None if local_state is None else _FWState(local_state.x.copy(), {k: [v[0], v[1]] for k, v in local_state.active.items()})
        verdict, st, g, info = run(mid, start)
        iterations += info["iterations"]
        heuristic |= not info["exact"]
        if verdict == "nonlocal":
            hi, g_hi = mid, g
        else:
            lo, local_state = mid, st
    info = {"fw_iterations": iterations}
    try:
        cert = extract_inequality(-g_hi, Pt, label="Frank-Wolfe gradient")
    except VertexCapError as exc:
        # bounds stay valid; only the exact certificate bound is out of reach
        cert, info["certificate_error"] = None, str(exc)
    closest = None if local_state is None else local_state.x.reshape(Pt.shape)
    return LhvResult(0.5 * (lo + hi), lo, hi, "FW-bounds", closest, cert, heuristic, info)


def no_signaling_constraints(d: int, mx: int, my: int) -> tuple[np.ndarray, np.ndarray]:
    """``A p = b`` for normalisation plus equal marginals across the other party's settings."""
    shape = (d, d, mx, my)
    rows, rhs = [], []

    def row():
        return np.zeros(shape)

    for x in range(mx):
        for y in range(my):
            r = row()
            r[:, :, x, y] = 1.0
            rows.append(r)
            rhs.append(1.0)
    for a in range(d):
        for x in range(mx):
            for y in range(1, my):
                r = row()
                r[a, :, x, y] = 1.0
                r[a, :, x, 0] = -1.0
                rows.append(r)
                rhs.append(0.0)
    for b in range(d):
        for y in range(my):
            for x in range(1, mx):
                r = row()
                r[:, b, x, y] = 1.0
                r[:, b, 0, y] = -1.0
                rows.append(r)
                rhs.append(0.0)
    return np.array([r.ravel() for r in rows]), np.array(rhs)


def signaling_residual(P) -> float:
    """Largest violation of normalisation or marginal equality, ``max |A p - b|``."""
    t = _array(P)
    A, b = no_signaling_constraints(*_shape(t))
    return float(np.abs(A @ t.ravel() - b).max())


def project_no_signaling(P_raw) -> ConditionalProbabilities:
    """Euclidean projection onto the affine no-signalling subspace.

    Negative entries are not clipped; they trigger a ``NoSignalingWarning``
    because the result then lies outside the no-signalling polytope.
    """
    t = _array(P_raw)
    d, mx, my = _shape(t)
    A, b = no_signaling_constraints(d, mx, my)
    p = t.ravel()
    resid = A @ p - b
    correction = A.T @ np.linalg.lstsq(A @ A.T, resid, rcond=None)[0]
    q = (p - correction).reshape(t.shape)
    if q.min() < -1e-12:
        warnings.warn(
            f"projection has negative entries (min {q.min():.3g}); outside the no-signalling polytope",
            NoSignalingWarning,
            stacklevel=2,
        )
    xs = getattr(P_raw, "x_settings", ())
    ys = getattr(P_raw, "y_settings", ())
    return ConditionalProbabilities(q, xs, ys, allow_negative=True)
