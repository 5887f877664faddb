"""Exact step length along a feasible descent direction.

Restricted to a ray, the objective is an exact cubic in the step t and
every constraint is an exact quadratic, so the step search runs on closed
forms: per-constraint feasible t-sets from the quadratic case analysis,
their intersection as a union of closed intervals, and the best of the
cubic's interior minimiser and the largest feasible step, subject to the
sufficient-decrease condition

    f(t) <= f(0) + t * eta * S . grad_f

and the per-constraint relaxation g_j(t) <= delta_j g_j(0), with
delta_j = delta0 where the stage multiplier is nonnegative and 1 otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nlp import GameNlp, PointEval

INF = float("inf")
CONTAIN_TOL = 1e-12


class IntervalSet:
    """Finite union of closed real intervals in canonical form."""

    __slots__ = ("segs",)

    def __init__(self, segs=()):
        cleaned = sorted((float(lo), float(hi)) for lo, hi in segs if lo <= hi)
        merged = []
        for lo, hi in cleaned:
            if merged and lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        self.segs = tuple((lo, hi) for lo, hi in merged)

    @classmethod
    def full(cls):
        return cls(((-INF, INF),))

    @classmethod
    def empty(cls):
        return cls()

    @classmethod
    def closed(cls, lo, hi):
        return cls(((lo, hi),))

    @property
    def is_empty(self) -> bool:
        return not self.segs

    @property
    def sup(self) -> float:
        return self.segs[-1][1] if self.segs else -INF

    def intersect(self, other: "IntervalSet") -> "IntervalSet":
        out = []
        i = j = 0
        a, b = self.segs, other.segs
        while i < len(a) and j < len(b):
            lo = max(a[i][0], b[j][0])
            hi = min(a[i][1], b[j][1])
            if lo <= hi:
                out.append((lo, hi))
            if a[i][1] < b[j][1]:
                i += 1
            else:
                j += 1
        return IntervalSet(out)

    def clip(self, lo, hi) -> "IntervalSet":
        return self.intersect(IntervalSet.closed(lo, hi))

    def contains(self, t, tol=0.0) -> bool:
        return any(lo - tol <= t <= hi + tol for lo, hi in self.segs)

    def bracket(self, t):
        """Nearest points of the set on each side of t (None when absent)."""
        below = None
        above = None
        for lo, hi in self.segs:
            if lo <= t <= hi:
                return t, t
            if hi < t:
                below = hi
            elif above is None:
                above = lo
        return below, above

    def __eq__(self, other):
        return isinstance(other, IntervalSet) and self.segs == other.segs

    def __hash__(self):
        return hash(self.segs)

    def __repr__(self):
        return f"IntervalSet({list(self.segs)!r})"


def quadratic_feasible(b: float, c: float, d: float) -> IntervalSet:
    """Solution set of ``b + c t + d t^2 <= 0`` over the reals.

    Total case analysis: linear and constant degenerations, no real roots
    (empty or everything by the sign of d), and the two-root cases yielding
    one interval (d > 0) or the complement of one (d < 0).
    """
    if d == 0.0:
        if c == 0.0:
            return IntervalSet.empty() if b > 0 else IntervalSet.full()
        if c > 0.0:
            return IntervalSet(((-INF, -b / c),))
        return IntervalSet(((-b / c, INF),))
    disc = c * c - 4.0 * b * d
    if disc < 0.0:
        return IntervalSet.empty() if d >= 0 else IntervalSet.full()
    sq = math.sqrt(disc)
    x1 = (-c + sq) / (2.0 * d)
    x2 = (-c - sq) / (2.0 * d)
    if x2 <= x1:
        return IntervalSet(((x2, x1),))
    return IntervalSet(((-INF, x1), (x2, INF)))


@dataclass(frozen=True)
class CubicRestriction:
    """Objective along the ray: f(x + t S) = d0 + d1 t + d2 t^2 + d3 t^3."""

    d0: float
    d1: float
    d2: float
    d3: float

    def value(self, t: float) -> float:
        return self.d0 + t * (self.d1 + t * (self.d2 + t * self.d3))

    def second_derivative(self, t: float) -> float:
        return 2.0 * self.d2 + 6.0 * self.d3 * t

    def positive_minimizer(self):
        """The local minimiser with t > 0, or None when f decreases forever.

        Which extremum minimises is decided by the sign of the second
        derivative at each stationary point, not by root order.
        """
        d1, d2, d3 = self.d1, self.d2, self.d3
        if d3 == 0.0:
            if d2 > 0.0:
                t = -d1 / (2.0 * d2)
                return t if t > 0 else None
            return None
        disc = d2 * d2 - 3.0 * d1 * d3
        if disc < 0.0:
            return None
        sq = math.sqrt(disc)
        for t in ((-d2 - sq) / (3.0 * d3), (-d2 + sq) / (3.0 * d3)):
            if t > 0 and self.second_derivative(t) > 0:
                return t
        return None


def _cubic_from_eval(ev: PointEval, s: np.ndarray) -> CubicRestriction:
    nlp = ev.nlp
    game = nlp.game
    sv1 = s[nlp.off_v1:nlp.off_v1 + nlp.n_states]
    sv2 = s[nlp.off_v2:nlp.off_v2 + nlp.n_states]
    sp1 = nlp.full_probs(s, 0, direction=True)
    sp2 = nlp.full_probs(s, 1, direction=True)
    k1j, k2j = game.k1_of_joint, game.k2_of_joint
    c00 = ev.p1f[k1j] * ev.p2f[k2j]
    c_lin = ev.p1f[k1j] * sp2[k2j] + sp1[k1j] * ev.p2f[k2j]
    c11 = sp1[k1j] * sp2[k2j]
    tv1 = nlp.t_mat @ ev.v[0]
    tv2 = nlp.t_mat @ ev.v[1]
    ts1 = nlp.t_mat @ sv1
    ts2 = nlp.t_mat @ sv2
    beta = nlp.beta
    d0 = (ev.v[0].sum() - c00 @ game.r1 - beta * (c00 @ tv1)
          + ev.v[1].sum() - c00 @ game.r2 - beta * (c00 @ tv2))
    d1 = (sv1.sum() - c_lin @ game.r1 - beta * (c00 @ ts1 + c_lin @ tv1)
          + sv2.sum() - c_lin @ game.r2 - beta * (c00 @ ts2 + c_lin @ tv2))
    d2 = (-c11 @ game.r1 - beta * (c_lin @ ts1 + c11 @ tv1)
          - c11 @ game.r2 - beta * (c_lin @ ts2 + c11 @ tv2))
    d3 = -beta * (c11 @ ts1 + c11 @ ts2)
    return CubicRestriction(float(d0), float(d1), float(d2), float(d3))


def cubic_coeffs(game, x, s) -> CubicRestriction:
    nlp = GameNlp.for_game(game)
    return _cubic_from_eval(nlp.evaluate(x), np.asarray(s, dtype=float))


def _batch_coeffs(ev: PointEval, s: np.ndarray, deltas: np.ndarray):
    """Per-constraint (b, c, d) of g_j(x + tS) - delta_j g_j(x) <= 0.

    Value constraints are exact quadratics; the simplex-sum and
    non-negativity constraints fall out as the linear case d = 0.
    """
    nlp = ev.nlp
    sv1 = s[nlp.off_v1:nlp.off_v1 + nlp.n_states]
    sv2 = s[nlp.off_v2:nlp.off_v2 + nlp.n_states]
    sr1 = s[nlp.off_p1:nlp.off_p1 + nlp.nr1]
    sr2 = s[nlp.off_p2:nlp.off_p2 + nlp.nr2]
    sp1 = nlp.full_probs(s, 0, direction=True)
    sp2 = nlp.full_probs(s, 1, direction=True)
    ts1 = nlp.t_mat @ sv1
    ts2 = nlp.t_mat @ sv2
    beta = nlp.beta

    c_h1 = (beta * nlp.marg1(ev.p2f, ts1) + nlp.marg1(sp2, ev.q1j)
            - sv1[nlp.state_of_k1])
    d_h1 = beta * nlp.marg1(sp2, ts1)
    c_h2 = (beta * nlp.marg2(ev.p1f, ts2) + nlp.marg2(sp1, ev.q2j)
            - sv2[nlp.state_of_k2])
    d_h2 = beta * nlp.marg2(sp1, ts2)
    c_sum1 = np.bincount(nlp.ret1_state, weights=sr1, minlength=nlp.n_states)
    c_sum2 = np.bincount(nlp.ret2_state, weights=sr2, minlength=nlp.n_states)

    c_all = np.concatenate((c_h1, c_h2, c_sum1, c_sum2, -sr1, -sr2))
    d_all = np.concatenate((d_h1, d_h2, np.zeros(2 * nlp.n_states + nlp.nr1 + nlp.nr2)))
    b_all = (1.0 - deltas) * ev.g
    return b_all, c_all, d_all


def constraint_coeffs(game, x, s, j: int, delta_j: float):
    """(b, c, d) of one constraint's step quadratic."""
    nlp = GameNlp.for_game(game)
    ev = nlp.evaluate(x)
    if not 0 <= j < nlp.n_cons:
        raise ValueError(f"constraint index {j} out of range")
    deltas = np.ones(nlp.n_cons)
    deltas[j] = delta_j
    b, c, d = _batch_coeffs(ev, np.asarray(s, dtype=float), deltas)
    return float(b[j]), float(c[j]), float(d[j])


def feasible_step_set(b: np.ndarray, c: np.ndarray, d: np.ndarray, t_cap: float) -> IntervalSet:
    """Intersection over constraints of the quadratic feasible sets on [0, t_cap].

    Single-interval cases reduce to two vector extrema; the concave cases
    whose allowed set is a complement of an interval are intersected exactly.
    """
    lower = 0.0
    upper = float(t_cap)
    unions = []

    # curvature below the rounding floor of the other coefficients is noise
    # from cancelling sums; treating it as quadratic manufactures spurious
    # roots near zero and at huge t
    lin = np.abs(d) <= 1e-14 * (np.abs(b) + np.abs(c))
    d = np.where(lin, 0.0, d)
    quad = ~lin
    # linear, nonconstant rows
    pos = lin & (c > 0.0)
    if pos.any():
        upper = min(upper, np.min(-b[pos] / c[pos]))
    neg = lin & (c < 0.0)
    if neg.any():
        lower = max(lower, np.max(-b[neg] / c[neg]))
    # constant rows are feasible iff b <= 0 (b = (1 - delta) g <= 0 always)
    const_bad = lin & (c == 0.0) & (b > 0.0)
    if const_bad.any():
        return IntervalSet.empty()

    if quad.any():
        disc = c[quad] ** 2 - 4.0 * b[quad] * d[quad]
        dq = d[quad]
        no_root = disc < 0.0
        if (no_root & (dq >= 0.0)).any():
            return IntervalSet.empty()
        roots = disc >= 0.0
        sq = np.sqrt(np.where(roots, disc, 0.0))
        x1 = (-c[quad] + sq) / (2.0 * dq)
        x2 = (-c[quad] - sq) / (2.0 * dq)
        convex = roots & (dq > 0.0)
        if convex.any():
            lower = max(lower, float(np.max(x2[convex])))
            upper = min(upper, float(np.min(x1[convex])))
        concave = roots & (dq < 0.0)
        for lo_c, hi_c in zip(x1[concave], x2[concave]):
            if lo_c < hi_c:
                unions.append((lo_c, hi_c))
            # x1 == x2 allows only the tangency point; keep the interval rule
            elif lo_c == hi_c:
                unions.append((lo_c, hi_c))

    out = IntervalSet.closed(lower, upper)
    for lo_c, hi_c in unions:
        out = out.intersect(IntervalSet(((-INF, lo_c), (hi_c, INF))))
        if out.is_empty:
            break
    return out


@dataclass
class StepResult:
    t: float
    cubic: CubicRestriction
    feasible: IntervalSet
    deltas: np.ndarray
    fallback: bool
    coeffs: tuple  # (b, c, d) arrays of the constraint quadratics


def select_step(cubic: CubicRestriction, feasible: IntervalSet,
                eta: float, nu: float, t_min: float):
    """Pick the step among the interior minimiser, its feasible neighbours and
    the largest feasible step; backtrack geometrically if none decreases enough.

    Returns (t, used_fallback); t = 0 signals that no acceptable positive step
    exists.
    """
    area = feasible.clip(0.0, INF)
    if area.is_empty or area.sup <= t_min:
        return 0.0, False

    def armijo(t):
        return cubic.value(t) <= cubic.d0 + eta * cubic.d1 * t

    candidates = []
    t_star = cubic.positive_minimizer()
    if t_star is not None:
        if area.contains(t_star, CONTAIN_TOL * (1 + abs(t_star))):
            candidates.append(min(t_star, area.sup))
        else:
            below, above = area.bracket(t_star)
            for cand in (below, above):
                if cand is not None:
                    candidates.append(cand)
    candidates.append(area.sup)
    candidates = sorted({t for t in candidates if t > t_min}, key=cubic.value)
    for t in candidates:
        if armijo(t):
            return t, False
    t = 1.0
    while t >= t_min:
        if area.contains(t, CONTAIN_TOL) and armijo(t):
            return t, True
        t /= nu
    return 0.0, True


def optimal_step(game_or_eval, x, s, gamma, *, delta0: float = 0.9, eta: float = 0.1,
                 nu: float = 2.0, t_cap: float = 1e6, t_min: float = 1e-14) -> StepResult:
    """Exact constrained step along ``s`` from the point ``x``."""
    if isinstance(game_or_eval, PointEval):
        ev = game_or_eval
    else:
        ev = GameNlp.for_game(game_or_eval).evaluate(x)
    s = np.asarray(s, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    deltas = np.where(gamma >= 0.0, delta0, 1.0)
    cubic = _cubic_from_eval(ev, s)
    b, c, d = _batch_coeffs(ev, s, deltas)
    feasible = feasible_step_set(b, c, d, t_cap)
    t, fallback = select_step(cubic, feasible, eta, nu, t_min)
    return StepResult(t=t, cubic=cubic, feasible=feasible, deltas=deltas,
                      fallback=fallback, coeffs=(b, c, d))
