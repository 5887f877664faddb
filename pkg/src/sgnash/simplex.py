"""Strictly interior starting points via phase-one revised simplex.

Holding the strategy fixed at uniform splits the program into one linear
feasibility system per player over that player's value vector.  A slack
``alpha > 0`` added to each value constraint keeps the result strictly
interior.  Only feasibility is needed, so only the first simplex phase runs:
a single artificial variable is driven to zero under Bland's rule.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg.blas import dger

from .games import StochasticGame, uniform_strategy
from .nlp import GameNlp

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-11


class LpInfeasibleError(RuntimeError):
    """The inequality system admits no solution."""


@dataclass
class LpProblem:
    """Inequality system ``a @ x <= b`` over free variables x.

    The cost vector is carried for completeness; phase one ignores it.
    """

    a: sp.csr_matrix
    b: np.ndarray
    cost: np.ndarray | None = None

    def __post_init__(self):
        self.a = sp.csr_matrix(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.a.shape[0] != self.b.shape[0]:
            raise ValueError("row count of a and length of b differ")


def phase_one_simplex(lp: LpProblem, tol: float = FEAS_TOL, max_pivots: int | None = None):
    """Any feasible point of ``a @ x <= b`` with x free, by phase-one simplex.

    Free variables are split into positive and negative parts; one artificial
    column makes the all-slack basis feasible and is then minimised out.
    Pricing starts with Dantzig's rule for speed and falls back permanently
    to Bland's rule once the artificial stalls, which keeps the pivot
    sequence finite and deterministic.

    Raises LpInfeasibleError when the artificial optimum stays positive.
    """
    a = lp.a.tocsc()
    b = lp.b
    n_rows, n_cols = a.shape
    if n_rows == 0:
        return np.zeros(n_cols)
    if b.min() >= -tol:
        return np.zeros(n_cols)
    # variable ids: [x+ (n_cols) | x- (n_cols) | artificial | slacks (n_rows)]
    art = 2 * n_cols
    slack0 = art + 1
    n_all = slack0 + n_rows
    if max_pivots is None:
        max_pivots = 200 * (n_rows + n_cols + 1)

    binv = np.asfortranarray(np.eye(n_rows))
    basis = np.arange(slack0, n_all)
    xb = b.copy()
    in_basis = np.zeros(n_all, dtype=bool)
    in_basis[basis] = True

    def column(j, out):
        out[:] = 0.0
        if j < 2 * n_cols:
            col = j if j < n_cols else j - n_cols
            lo, hi = a.indptr[col], a.indptr[col + 1]
            out[a.indices[lo:hi]] = a.data[lo:hi] if j < n_cols else -a.data[lo:hi]
        elif j == art:
            out[:] = -1.0
        else:
            out[j - slack0] = 1.0
        return out

    def pivot(enter, leave_row, d):
        t = xb[leave_row] / d[leave_row]
        xb[:] -= t * d
        xb[leave_row] = t
        binv[leave_row, :] /= d[leave_row]
        piv = binv[leave_row, :].copy()
        d2 = d.copy()
        d2[leave_row] = 0.0
        # in-place rank-1 update binv -= outer(d2, piv); binv stays F-ordered
        dger(-1.0, d2, piv, a=binv, overwrite_a=1)
        in_basis[basis[leave_row]] = False
        in_basis[enter] = True
        basis[leave_row] = enter

    work = np.empty(n_rows)
    # special first pivot: bring the artificial in on the most violated row
    leave = int(np.argmin(xb))
    pivot(art, leave, binv @ column(art, work))

    bland = False
    stall = 0
    last_art = np.inf
    for _ in range(max_pivots):
        art_rows = np.nonzero(basis == art)[0]
        if len(art_rows) == 0:
            break  # artificial left the basis at value zero: feasible
        art_value = xb[art_rows[0]]
        if art_value < last_art - 1e-12:
            last_art = art_value
            stall = 0
        else:
            stall += 1
            if stall > 50:
                bland = True  # anti-cycling mode
        # phase-one objective is the artificial alone: y = row of binv
        y = binv[art_rows[0]]
        aty = a.T @ y
        rc = np.empty(n_all)
        rc[:n_cols] = -aty
        rc[n_cols:2 * n_cols] = aty
        rc[art] = 0.0  # basic
        rc[slack0:] = -y
        rc[in_basis] = 0.0
        if bland:
            candidates = np.nonzero(rc < -tol)[0]
            if len(candidates) == 0:
                break
            enter = int(candidates[0])
        else:
            enter = int(np.argmin(rc))
            if rc[enter] >= -tol:
                break  # phase-one optimum reached
        d = binv @ column(enter, work)
        rows = np.nonzero(d > PIVOT_TOL)[0]
        if len(rows) == 0:
            raise RuntimeError("phase-one subproblem unbounded; numerical breakdown")
        ratios = xb[rows] / d[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12]
        # drive the artificial out as soon as it can leave
        tie_art = ties[basis[ties] == art]
        leave_row = int(tie_art[0]) if len(tie_art) else int(ties[np.argmin(basis[ties])])
        pivot(enter, leave_row, d)
    else:
        raise RuntimeError("phase-one simplex exceeded the pivot limit")

    art_value = xb[basis == art].sum() if in_basis[art] else 0.0
    if art_value > tol:
        raise LpInfeasibleError(f"infeasible system: artificial optimum {art_value:g}")
    x_full = np.zeros(n_all)
    x_full[basis] = xb
    return x_full[:n_cols] - x_full[n_cols:2 * n_cols]


def value_feasibility_lp(game: StochasticGame, player: int, alpha: float) -> LpProblem:
    """The per-player value inequality system at the uniform strategy.

    Rows are indexed by (state, own action); row (x, a) reads
    ``beta * E_opp[P v](x, a) - v(x) <= -(E_opp[r](x, a) + alpha)``.
    """
    nlp = GameNlp.for_game(game)
    if player == 0:
        opp = np.concatenate([np.full(int(m), 1.0 / m) for m in game.m2])
        tm = nlp.tm1_matrix(opp)
        rbar = nlp.marg1(opp, game.r1)
        own_state = nlp.state_of_k1
        k = nlp.k1
    else:
        opp = np.concatenate([np.full(int(m), 1.0 / m) for m in game.m1])
        tm = nlp.tm2_matrix(opp)
        rbar = nlp.marg2(opp, game.r2)
        own_state = nlp.state_of_k2
        k = nlp.k2
    own = sp.csr_matrix((np.ones(k), (np.arange(k), own_state)),
                        shape=(k, game.n_states))
    a = (game.discount * tm - own).tocsr()
    b = -(rbar + alpha)
    return LpProblem(a, b, cost=np.ones(game.n_states))


def initial_point(game: StochasticGame, alpha: float = 0.5) -> np.ndarray:
    """Strictly feasible packed starting point (uniform strategy, padded values)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    nlp = GameNlp.for_game(game)
    v = np.empty((2, game.n_states))
    for player in range(2):
        lp = value_feasibility_lp(game, player, alpha)
        try:
            v[player] = phase_one_simplex(lp)
        except LpInfeasibleError as exc:  # cannot occur for discount < 1
            raise RuntimeError(f"initial feasibility LP failed for player {player + 1}") from exc
    x = nlp.pack(v, uniform_strategy(game))
    ev = nlp.evaluate(x)
    if ev.max_violation >= 0:
        raise RuntimeError(
            f"phase-one point not strictly interior (max g = {ev.max_violation:g})"
        )
    return x
