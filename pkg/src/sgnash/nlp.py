"""The equilibrium nonlinear program over values and strategies.

Decision variables are packed as ``[v1 | v2 | reduced pi1 | reduced pi2]``.
Per state and player the highest-indexed action is eliminated: its
probability is implicitly ``1 - sum(retained)``, which turns the two
per-state simplex equalities into one inequality each.

Inequality constraints ``g_j <= 0`` are ordered as::

    [h1 per (x, a1) | h2 per (x, a2) | sum1 per x | sum2 per x |
     -pi1 retained | -pi2 retained]

where ``h_i`` is the value-constraint slack: the opponent-averaged action
value minus the state value.  A point is feasible iff ``max_j g_j <= 0``.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .games import JointStrategy, StochasticGame


@dataclass(frozen=True)
class ProblemCensus:
    """Variable and constraint counts in both conventions.

    ``full_*`` counts keep every probability coordinate (the convention used
    when quoting problem sizes); ``reduced_*`` counts are after eliminating
    one probability per state and player.
    """

    full_variables: int
    full_constraints: int
    reduced_variables: int
    reduced_constraints: int


class GameNlp:
    """Compiled evaluation tables for one game's equilibrium program."""

    _cache = weakref.WeakKeyDictionary()

    @classmethod
    def for_game(cls, game: StochasticGame) -> "GameNlp":
        nlp = cls._cache.get(game)
        if nlp is None:
            nlp = cls(game)
            cls._cache[game] = nlp
        return nlp

    def __init__(self, game: StochasticGame):
        self.game = game
        s = game.n_states
        self.n_states = s
        self.k1 = int(game.act1_base[-1])
        self.k2 = int(game.act2_base[-1])
        self.beta = game.discount

        # variable packing offsets
        self.nr1 = self.k1 - s  # retained pi1 coordinates
        self.nr2 = self.k2 - s
        self.off_v1 = 0
        self.off_v2 = s
        self.off_p1 = 2 * s
        self.off_p2 = 2 * s + self.nr1
        self.n_vars = 2 * s + self.nr1 + self.nr2

        # constraint block offsets
        self.c_h1 = 0
        self.c_h2 = self.k1
        self.c_sum1 = self.k1 + self.k2
        self.c_sum2 = self.c_sum1 + s
        self.c_nn1 = self.c_sum2 + s
        self.c_nn2 = self.c_nn1 + self.nr1
        self.n_cons = self.c_nn2 + self.nr2

        self.state_of_k1 = np.repeat(np.arange(s), game.m1)
        self.state_of_k2 = np.repeat(np.arange(s), game.m2)
        self.elim1 = game.act1_base[:-1] + game.m1 - 1
        self.elim2 = game.act2_base[:-1] + game.m2 - 1
        self.ret1_state = np.repeat(np.arange(s), game.m1 - 1)
        self.ret2_state = np.repeat(np.arange(s), game.m2 - 1)
        ret1_ptr = np.concatenate(([0], np.cumsum(game.m1 - 1)))
        ret2_ptr = np.concatenate(([0], np.cumsum(game.m2 - 1)))
        self.ret1_act = game.act1_base[self.ret1_state] + (np.arange(self.nr1) - ret1_ptr[self.ret1_state])
        self.ret2_act = game.act2_base[self.ret2_state] + (np.arange(self.nr2) - ret2_ptr[self.ret2_state])

        # static successor-level tables
        counts = np.diff(game.trans_indptr)
        self.j_of_entry = np.repeat(np.arange(game.n_joint), counts)
        self.k1_of_entry = game.k1_of_joint[self.j_of_entry]
        self.k2_of_entry = game.k2_of_joint[self.j_of_entry]
        x_of_entry = game.x_of_joint[self.j_of_entry]
        self.t_mat = sp.csr_matrix(
            (game.trans_p, game.trans_y, game.trans_indptr), shape=(game.n_joint, s)
        )

        # opponent-averaged transition patterns, one row per (x, a^i); the own
        # state's column is forced into the pattern for the -1 diagonal term
        self.tm1 = _coalesced(self.k1_of_entry, game.trans_y, self.state_of_k1, s)
        self.tm2 = _coalesced(self.k2_of_entry, game.trans_y, self.state_of_k2, s)

        # strategy-averaged state-to-state pattern
        keys = x_of_entry * s + game.trans_y
        uniq, inv = np.unique(keys, return_inverse=True)
        self.p_map = inv
        self.p_cols = uniq % s
        self.p_nnz = len(uniq)

        self._build_gradient_pattern()

    # -- construction of the constraint-gradient pattern ---------------------

    def _build_gradient_pattern(self):
        game = self.game
        s = self.n_states
        # h1 columns: v1 rows from tm1, then retained pi2 rows of the state
        a_rows = self.tm1.cols + self.off_v1
        a_cols = self.tm1.rows
        # every (k1 = (x, a1), retained a2) pair of each state
        b_cols = []
        b_rows = []
        b_jret = []
        b_jelim = []
        for x in range(s):
            m1x, m2x = game.m1[x], game.m2[x]
            if m2x == 1:
                continue
            a1 = np.arange(m1x)
            ret_a2 = np.arange(m2x - 1)
            cols = (game.act1_base[x] + a1)[None, :].repeat(m2x - 1, axis=0)
            rows = (self.off_p2 + game.act2_base[x] - x + ret_a2)[:, None].repeat(m1x, axis=1)
            jret = game.ja_base[x] + ret_a2[:, None] * m1x + a1[None, :]
            jelim = np.broadcast_to(game.ja_base[x] + (m2x - 1) * m1x + a1[None, :], jret.shape)
            b_cols.append(cols.ravel())
            b_rows.append(rows.ravel())
            b_jret.append(jret.ravel())
            b_jelim.append(jelim.ravel())
        self.b1_cols = _cat(b_cols)
        self.b1_rows = _cat(b_rows)
        self.b1_jret = _cat(b_jret)
        self.b1_jelim = _cat(b_jelim)

        c_rows = self.tm2.cols + self.off_v2
        c_cols = self.c_h2 + self.tm2.rows
        d_cols = []
        d_rows = []
        d_jret = []
        d_jelim = []
        for x in range(s):
            m1x, m2x = game.m1[x], game.m2[x]
            if m1x == 1:
                continue
            a2 = np.arange(m2x)
            ret_a1 = np.arange(m1x - 1)
            cols = self.c_h2 + (game.act2_base[x] + a2)[None, :].repeat(m1x - 1, axis=0)
            rows = (self.off_p1 + game.act1_base[x] - x + ret_a1)[:, None].repeat(m2x, axis=1)
            jret = game.ja_base[x] + a2[None, :] * m1x + ret_a1[:, None]
            jelim = game.ja_base[x] + a2[None, :] * m1x + (m1x - 1)
            jelim = np.broadcast_to(jelim, jret.shape)
            d_cols.append(cols.ravel())
            d_rows.append(rows.ravel())
            d_jret.append(jret.ravel())
            d_jelim.append(jelim.ravel())
        self.d2_cols = _cat(d_cols)
        self.d2_rows = _cat(d_rows)
        self.d2_jret = _cat(d_jret)
        self.d2_jelim = _cat(d_jelim)

        sum1_rows = self.off_p1 + np.arange(self.nr1)
        sum1_cols = self.c_sum1 + self.ret1_state
        sum2_rows = self.off_p2 + np.arange(self.nr2)
        sum2_cols = self.c_sum2 + self.ret2_state
        nn1_rows = self.off_p1 + np.arange(self.nr1)
        nn1_cols = self.c_nn1 + np.arange(self.nr1)
        nn2_rows = self.off_p2 + np.arange(self.nr2)
        nn2_cols = self.c_nn2 + np.arange(self.nr2)

        rows = np.concatenate([a_rows, self.b1_rows, c_rows, self.d2_rows,
                               sum1_rows, sum2_rows, nn1_rows, nn2_rows])
        cols = np.concatenate([a_cols + self.c_h1, self.b1_cols, c_cols, self.d2_cols,
                               sum1_cols, sum2_cols, nn1_cols, nn2_cols])
        order = np.lexsort((rows, cols))
        self.g_order = order
        self.g_indices = rows[order]
        self.g_indptr = np.concatenate(([0], np.cumsum(np.bincount(cols, minlength=self.n_cons))))
        self.g_nnz = len(rows)
        self._g_static_tail = np.concatenate([
            np.ones(self.nr1), np.ones(self.nr2), -np.ones(self.nr1), -np.ones(self.nr2)
        ])
        self._g_shared = sp.csc_matrix(
            (np.zeros(self.g_nnz), self.g_indices, self.g_indptr),
            shape=(self.n_vars, self.n_cons),
        )

    # -- packing -------------------------------------------------------------

    def pack(self, v: np.ndarray, strategy: JointStrategy) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        x = np.empty(self.n_vars)
        x[self.off_v1:self.off_v1 + self.n_states] = v[0]
        x[self.off_v2:self.off_v2 + self.n_states] = v[1]
        p1 = np.concatenate([np.asarray(p, dtype=float) for p in strategy.probs[0]])
        p2 = np.concatenate([np.asarray(p, dtype=float) for p in strategy.probs[1]])
        x[self.off_p1:self.off_p1 + self.nr1] = p1[self.ret1_act]
        x[self.off_p2:self.off_p2 + self.nr2] = p2[self.ret2_act]
        return x

    def values(self, x: np.ndarray) -> np.ndarray:
        return np.vstack((x[self.off_v1:self.off_v1 + self.n_states],
                          x[self.off_v2:self.off_v2 + self.n_states]))

    def full_probs(self, x: np.ndarray, player: int, direction: bool = False) -> np.ndarray:
        """Reconstruct the full flat probability vector of one player.

        With ``direction=True`` the eliminated coordinate is ``-sum(retained)``
        (the homogeneous map used for search directions).
        """
        if player == 0:
            xr = x[self.off_p1:self.off_p1 + self.nr1]
            out = np.zeros(self.k1)
            out[self.ret1_act] = xr
            sums = np.bincount(self.ret1_state, weights=xr, minlength=self.n_states)
            out[self.elim1] = -sums if direction else 1.0 - sums
        else:
            xr = x[self.off_p2:self.off_p2 + self.nr2]
            out = np.zeros(self.k2)
            out[self.ret2_act] = xr
            sums = np.bincount(self.ret2_state, weights=xr, minlength=self.n_states)
            out[self.elim2] = -sums if direction else 1.0 - sums
        return out

    def strategy(self, x: np.ndarray) -> JointStrategy:
        p1 = self.full_probs(x, 0)
        p2 = self.full_probs(x, 1)
        game = self.game
        probs1 = [p1[game.act1_base[s]:game.act1_base[s + 1]].copy() for s in range(self.n_states)]
        probs2 = [p2[game.act2_base[s]:game.act2_base[s + 1]].copy() for s in range(self.n_states)]
        return JointStrategy([probs1, probs2])

    def check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_vars,):
            raise ValueError(f"point has shape {x.shape}, expected ({self.n_vars},)")
        return x

    # -- marginalisations ------------------------------------------------------

    def marg1(self, w2f: np.ndarray, joint_vec: np.ndarray) -> np.ndarray:
        """Aggregate a per-joint-action vector to (x, a1) with player-2 weights."""
        g = self.game
        return np.bincount(g.k1_of_joint, weights=w2f[g.k2_of_joint] * joint_vec, minlength=self.k1)

    def marg2(self, w1f: np.ndarray, joint_vec: np.ndarray) -> np.ndarray:
        g = self.game
        return np.bincount(g.k2_of_joint, weights=w1f[g.k1_of_joint] * joint_vec, minlength=self.k2)

    def tm1_data(self, p2f: np.ndarray) -> np.ndarray:
        w = self.game.trans_p * p2f[self.k2_of_entry]
        return np.bincount(self.tm1.entry_map, weights=w, minlength=self.tm1.nnz)

    def tm2_data(self, p1f: np.ndarray) -> np.ndarray:
        w = self.game.trans_p * p1f[self.k1_of_entry]
        return np.bincount(self.tm2.entry_map, weights=w, minlength=self.tm2.nnz)

    def tm1_matrix(self, p2f: np.ndarray) -> sp.csr_matrix:
        """Opponent-averaged transitions, one row per (x, a1), columns states."""
        return sp.csr_matrix((self.tm1_data(p2f), self.tm1.cols, self.tm1.indptr),
                             shape=(self.k1, self.n_states))

    def tm2_matrix(self, p1f: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((self.tm2_data(p1f), self.tm2.cols, self.tm2.indptr),
                             shape=(self.k2, self.n_states))

    # -- point evaluation ------------------------------------------------------

    def evaluate(self, x) -> "PointEval":
        return PointEval(self, self.check_point(x))

    def census(self) -> ProblemCensus:
        s = self.n_states
        return ProblemCensus(
            full_variables=2 * s + self.k1 + self.k2,
            full_constraints=2 * (self.k1 + self.k2),
            reduced_variables=self.n_vars,
            reduced_constraints=self.n_cons,
        )


class _Coalesced:
    """CSR pattern over (group row, state column) with an entry scatter map."""

    __slots__ = ("rows", "cols", "indptr", "entry_map", "diag_slots", "nnz")

    def __init__(self, rows, cols, indptr, entry_map, diag_slots):
        self.rows = rows
        self.cols = cols
        self.indptr = indptr
        self.entry_map = entry_map
        self.diag_slots = diag_slots
        self.nnz = len(rows)


def _coalesced(group_of_entry, y_of_entry, own_state, n_states) -> _Coalesced:
    n_groups = len(own_state)
    keys = group_of_entry * n_states + y_of_entry
    diag_keys = np.arange(n_groups) * n_states + own_state
    uniq, inv = np.unique(np.concatenate((keys, diag_keys)), return_inverse=True)
    entry_map = inv[:len(keys)]
    diag_slots = inv[len(keys):]
    rows = uniq // n_states
    cols = uniq % n_states
    indptr = np.concatenate(([0], np.cumsum(np.bincount(rows, minlength=n_groups))))
    return _Coalesced(rows, cols, indptr, entry_map, diag_slots)


def _cat(parts):
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(parts)


class PointEval:
    """Constraint and objective quantities of one packed point.

    Cheap parts (probability reconstruction, action values, constraint
    values) are computed eagerly; the objective, gradient and constraint
    gradients are computed on first use.
    """

    def __init__(self, nlp: GameNlp, x: np.ndarray):
        self.nlp = nlp
        self.x = x
        g = nlp.game
        self.v = nlp.values(x)
        self.p1f = nlp.full_probs(x, 0)
        self.p2f = nlp.full_probs(x, 1)
        self.q1j = g.r1 + nlp.beta * (nlp.t_mat @ self.v[0])
        self.q2j = g.r2 + nlp.beta * (nlp.t_mat @ self.v[1])
        self.h1 = nlp.marg1(self.p2f, self.q1j) - self.v[0][nlp.state_of_k1]
        self.h2 = nlp.marg2(self.p1f, self.q2j) - self.v[1][nlp.state_of_k2]
        xr1 = x[nlp.off_p1:nlp.off_p1 + nlp.nr1]
        xr2 = x[nlp.off_p2:nlp.off_p2 + nlp.nr2]
        sum1 = np.bincount(nlp.ret1_state, weights=xr1, minlength=nlp.n_states) - 1.0
        sum2 = np.bincount(nlp.ret2_state, weights=xr2, minlength=nlp.n_states) - 1.0
        self.g = np.concatenate((self.h1, self.h2, sum1, sum2, -xr1, -xr2))
        self._f = None
        self._grad = None
        self._p_data = None

    @property
    def max_violation(self) -> float:
        return float(self.g.max())

    def p_weights(self):
        """Strategy-averaged transition data on the fixed (x, y) pattern."""
        if self._p_data is None:
            nlp = self.nlp
            g = nlp.game
            wj = self.p1f[g.k1_of_joint] * self.p2f[g.k2_of_joint]
            self._p_data = np.bincount(nlp.p_map, weights=g.trans_p * wj[nlp.j_of_entry],
                                       minlength=nlp.p_nnz)
        return self._p_data

    @property
    def f(self) -> float:
        """Objective: summed evaluation-equation slack over players and states."""
        if self._f is None:
            nlp = self.nlp
            g = nlp.game
            wj = self.p1f[g.k1_of_joint] * self.p2f[g.k2_of_joint]
            rpi1 = float(np.dot(wj, g.r1))
            rpi2 = float(np.dot(wj, g.r2))
            pd = self.p_weights()
            pv1 = float(np.dot(pd, self.v[0][nlp.p_cols]))
            pv2 = float(np.dot(pd, self.v[1][nlp.p_cols]))
            self._f = (self.v[0].sum() - rpi1 - nlp.beta * pv1
                       + self.v[1].sum() - rpi2 - nlp.beta * pv2)
        return self._f

    @property
    def f_product_sum(self) -> float:
        """Same objective through the paired product form."""
        return float(-(self.p1f @ self.h1) - (self.p2f @ self.h2))

    @property
    def grad_f(self) -> np.ndarray:
        if self._grad is None:
            nlp = self.nlp
            pd = self.p_weights()
            colsum = np.bincount(nlp.p_cols, weights=pd, minlength=nlp.n_states)
            gv = 1.0 - nlp.beta * colsum
            s2 = nlp.marg1(self.p2f, self.q2j)
            t1 = self.h1 + s2
            gp1 = t1[nlp.elim1[nlp.ret1_state]] - t1[nlp.ret1_act]
            s1 = nlp.marg2(self.p1f, self.q1j)
            t2 = self.h2 + s1
            gp2 = t2[nlp.elim2[nlp.ret2_state]] - t2[nlp.ret2_act]
            self._grad = np.concatenate((gv, gv, gp1, gp2))
        return self._grad

    def constraint_gradients(self, copy: bool = False) -> sp.csc_matrix:
        """Sparse matrix whose columns are the constraint gradients.

        The returned matrix shares storage with the evaluator unless
        ``copy=True``; it is overwritten by the next evaluation.
        """
        nlp = self.nlp
        nat_a = nlp.beta * nlp.tm1_data(self.p2f)
        nat_a[nlp.tm1.diag_slots] -= 1.0
        nat_b = self.q1j[nlp.b1_jret] - self.q1j[nlp.b1_jelim]
        nat_c = nlp.beta * nlp.tm2_data(self.p1f)
        nat_c[nlp.tm2.diag_slots] -= 1.0
        nat_d = self.q2j[nlp.d2_jret] - self.q2j[nlp.d2_jelim]
        nat = np.concatenate((nat_a, nat_b, nat_c, nat_d, nlp._g_static_tail))
        mat = nlp._g_shared
        mat.data[:] = nat[nlp.g_order]
        return mat.copy() if copy else mat


# -- public operations --------------------------------------------------------

def pack_point(game: StochasticGame, v, strategy: JointStrategy) -> np.ndarray:
    return GameNlp.for_game(game).pack(np.asarray(v, dtype=float), strategy)


def unpack_strategy(game: StochasticGame, x) -> JointStrategy:
    nlp = GameNlp.for_game(game)
    return nlp.strategy(nlp.check_point(x))


def unpack_values(game: StochasticGame, x) -> np.ndarray:
    nlp = GameNlp.for_game(game)
    return nlp.values(nlp.check_point(x))


def objective(game: StochasticGame, x) -> float:
    """f(v, pi): total evaluation-equation slack, nonnegative on the feasible set."""
    return GameNlp.for_game(game).evaluate(x).f


def objective_product_sum(game: StochasticGame, x) -> float:
    """Equivalent product form of the objective; every summand is -pi * h."""
    return GameNlp.for_game(game).evaluate(x).f_product_sum


def constraints(game: StochasticGame, x) -> np.ndarray:
    """All inequality constraints g_j(x); feasible iff every entry is <= 0."""
    return GameNlp.for_game(game).evaluate(x).g


def objective_gradient(game: StochasticGame, x) -> np.ndarray:
    return GameNlp.for_game(game).evaluate(x).grad_f.copy()


def constraint_gradients(game: StochasticGame, x) -> sp.csc_matrix:
    return GameNlp.for_game(game).evaluate(x).constraint_gradients(copy=True)


def census(game: StochasticGame) -> ProblemCensus:
    return GameNlp.for_game(game).census()
