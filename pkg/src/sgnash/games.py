"""Finite two-player discounted stochastic games and strategy-evaluation primitives.

A game couples a finite state set with per-state simultaneous-move bimatrix
games; transitions and rewards depend on the joint action.  Transition and
reward tables are stored flat, grouped by joint action, so that evaluation
code can run vectorised over the whole game.  Joint actions of state ``x``
are enumerated with player 1's action varying fastest::

    j = ja_base[x] + a2 * m1(x) + a1
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-12
STRATEGY_SUM_TOL = 1e-12
VALUE_RESIDUAL_TOL = 1e-9


@dataclass(eq=False)
class StochasticGame:
    """Immutable two-player discounted stochastic game.

    Parameters
    ----------
    discount : float in (0, 1)
    n_actions : (S, 2) int array, per-state action counts for both players
    successors : list of sorted int arrays, reachable states U(x)
    trans_indptr : (NJ + 1,) offsets of each joint action into trans_y/trans_p
    trans_y, trans_p : flat successor indices and probabilities
    r1, r2 : (NJ,) per-joint-action rewards of players 1 and 2
    """

    discount: float
    n_actions: np.ndarray
    successors: list
    trans_indptr: np.ndarray
    trans_y: np.ndarray
    trans_p: np.ndarray
    r1: np.ndarray
    r2: np.ndarray

    # derived index tables, filled in __post_init__
    n_states: int = field(init=False)
    m1: np.ndarray = field(init=False)
    m2: np.ndarray = field(init=False)
    ja_base: np.ndarray = field(init=False)
    n_joint: int = field(init=False)
    x_of_joint: np.ndarray = field(init=False)
    a1_of_joint: np.ndarray = field(init=False)
    a2_of_joint: np.ndarray = field(init=False)
    act1_base: np.ndarray = field(init=False)
    act2_base: np.ndarray = field(init=False)
    k1_of_joint: np.ndarray = field(init=False)
    k2_of_joint: np.ndarray = field(init=False)

    def __post_init__(self):
        self.n_actions = np.asarray(self.n_actions, dtype=np.int64)
        self.n_states = self.n_actions.shape[0]
        self.m1 = self.n_actions[:, 0]
        self.m2 = self.n_actions[:, 1]
        block = self.m1 * self.m2
        self.ja_base = np.concatenate(([0], np.cumsum(block)))
        self.n_joint = int(self.ja_base[-1])
        self.x_of_joint = np.repeat(np.arange(self.n_states), block)
        local = np.arange(self.n_joint) - self.ja_base[self.x_of_joint]
        m1x = self.m1[self.x_of_joint]
        self.a1_of_joint = local % m1x
        self.a2_of_joint = local // m1x
        self.act1_base = np.concatenate(([0], np.cumsum(self.m1)))
        self.act2_base = np.concatenate(([0], np.cumsum(self.m2)))
        self.k1_of_joint = self.act1_base[self.x_of_joint] + self.a1_of_joint
        self.k2_of_joint = self.act2_base[self.x_of_joint] + self.a2_of_joint
        self.trans_indptr = np.asarray(self.trans_indptr, dtype=np.int64)
        self.trans_y = np.asarray(self.trans_y, dtype=np.int64)
        self.trans_p = np.asarray(self.trans_p, dtype=np.float64)
        self.r1 = np.asarray(self.r1, dtype=np.float64)
        self.r2 = np.asarray(self.r2, dtype=np.float64)
        self.successors = [np.asarray(u, dtype=np.int64) for u in self.successors]

    # -- construction helpers ------------------------------------------------

    @classmethod
    def from_tables(cls, discount, n_actions, successors, transitions, rewards=None):
        """Build a game from per-joint-action entry lists.

        ``transitions`` maps (x, a1, a2) -> sequence of (y, p) pairs and
        ``rewards`` maps (x, a1, a2) -> (r1, r2); missing reward entries
        default to zero.
        """
        n_actions = np.asarray(n_actions, dtype=np.int64)
        n_states = n_actions.shape[0]
        block = n_actions[:, 0] * n_actions[:, 1]
        ja_base = np.concatenate(([0], np.cumsum(block)))
        n_joint = int(ja_base[-1])

        ys, ps = [], []
        indptr = np.zeros(n_joint + 1, dtype=np.int64)
        r1 = np.zeros(n_joint)
        r2 = np.zeros(n_joint)
        rewards = rewards or {}
        for (x, a1, a2), pairs in transitions.items():
            j = ja_base[x] + a2 * n_actions[x, 0] + a1
            indptr[j + 1] = len(pairs)
        indptr = np.cumsum(indptr)
        trans_y = np.zeros(indptr[-1], dtype=np.int64)
        trans_p = np.zeros(indptr[-1])
        for (x, a1, a2), pairs in transitions.items():
            j = ja_base[x] + a2 * n_actions[x, 0] + a1
            lo = indptr[j]
            for t, (y, p) in enumerate(pairs):
                trans_y[lo + t] = y
                trans_p[lo + t] = p
        for (x, a1, a2), (v1, v2) in rewards.items():
            j = ja_base[x] + a2 * n_actions[x, 0] + a1
            r1[j] = v1
            r2[j] = v2
        return cls(discount, n_actions, successors, indptr, trans_y, trans_p, r1, r2)

    def joint_index(self, x, a1, a2):
        return int(self.ja_base[x] + a2 * self.m1[x] + a1)

    def transition_row(self, x, a1, a2):
        """Sparse (ys, ps) distribution of one joint action."""
        j = self.joint_index(x, a1, a2)
        lo, hi = self.trans_indptr[j], self.trans_indptr[j + 1]
        return self.trans_y[lo:hi], self.trans_p[lo:hi]


@dataclass(eq=False)
class JointStrategy:
    """Stationary randomized strategies: probs[i][x] is player i's mixture at x."""

    probs: list

    def copy(self):
        return JointStrategy([[p.copy() for p in pl] for pl in self.probs])

    def __getitem__(self, i):
        return self.probs[i]


def uniform_strategy(game: StochasticGame) -> JointStrategy:
    """Uniform mixture 1/m^i(x) over every action set."""
    probs = []
    for i in range(2):
        m = game.n_actions[:, i]
        probs.append([np.full(int(mx), 1.0 / mx) for mx in m])
    return JointStrategy(probs)


def validate_game(game: StochasticGame) -> list:
    """Return a list of human-readable invariant violations (empty if valid)."""
    out = []
    if not (0.0 < game.discount < 1.0):
        out.append(f"discount {game.discount} outside (0, 1)")
    if np.any(game.n_actions < 1):
        bad = np.argwhere(game.n_actions < 1)[0]
        out.append(f"state {bad[0]} player {bad[1] + 1} has no actions")
    if np.any(game.trans_p < 0):
        ell = int(np.argmin(game.trans_p))
        out.append(f"negative transition probability at flat entry {ell}")
    sums = np.zeros(game.n_joint)
    np.add.at(sums, np.repeat(np.arange(game.n_joint), np.diff(game.trans_indptr)), game.trans_p)
    bad = np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)[0]
    for j in bad[:20]:
        x = game.x_of_joint[j]
        out.append(
            "transition row sums to %.12g at state %d actions (%d, %d)"
            % (sums[j], x, game.a1_of_joint[j], game.a2_of_joint[j])
        )
    if len(bad) > 20:
        out.append(f"... {len(bad) - 20} more row-sum violations")
    # successors must cover every referenced state
    for x in range(game.n_states):
        lo = game.trans_indptr[game.ja_base[x]]
        hi = game.trans_indptr[game.ja_base[x + 1]]
        ys = np.unique(game.trans_y[lo:hi])
        if not np.isin(ys, game.successors[x]).all():
            out.append(f"state {x} transitions reach states outside the declared successor set")
    # absorbing states must self-loop with probability one (implied by row
    # sums when U(x) = {x}; checked explicitly to name the state)
    for x in range(game.n_states):
        u = game.successors[x]
        if len(u) == 1 and u[0] == x:
            for j in range(game.ja_base[x], game.ja_base[x + 1]):
                lo, hi = game.trans_indptr[j], game.trans_indptr[j + 1]
                if not (hi - lo == 1 and game.trans_y[lo] == x and abs(game.trans_p[lo] - 1) <= ROW_SUM_TOL):
                    out.append(f"absorbing state {x} lacks a probability-one self-loop")
                    break
    return out


def validate_strategy(game: StochasticGame, strategy: JointStrategy) -> list:
    """Report strategy-shape and probability-vector violations."""
    out = []
    if len(strategy.probs) != 2:
        return ["strategy must hold exactly two players"]
    for i in range(2):
        if len(strategy.probs[i]) != game.n_states:
            out.append(f"player {i + 1} strategy covers {len(strategy.probs[i])} states, game has {game.n_states}")
            continue
        for x, p in enumerate(strategy.probs[i]):
            if len(p) != game.n_actions[x, i]:
                out.append(f"player {i + 1} state {x}: {len(p)} probabilities for {game.n_actions[x, i]} actions")
            elif np.any(np.asarray(p) < 0):
                out.append(f"player {i + 1} state {x}: negative probability")
            elif abs(np.sum(p) - 1.0) > STRATEGY_SUM_TOL:
                out.append(f"player {i + 1} state {x}: probabilities sum to {np.sum(p)!r}")
    return out


def _flat_probs(game: StochasticGame, strategy: JointStrategy):
    """Concatenate per-state mixtures into flat (K1,) and (K2,) arrays."""
    p1 = np.concatenate([np.asarray(p, dtype=float) for p in strategy.probs[0]])
    p2 = np.concatenate([np.asarray(p, dtype=float) for p in strategy.probs[1]])
    if p1.size != game.act1_base[-1] or p2.size != game.act2_base[-1]:
        raise ValueError("strategy dimensions do not match the game")
    return p1, p2


def _joint_weights(game: StochasticGame, strategy: JointStrategy):
    p1, p2 = _flat_probs(game, strategy)
    return p1[game.k1_of_joint] * p2[game.k2_of_joint]


def expected_reward(game: StochasticGame, strategy: JointStrategy) -> np.ndarray:
    """Per-player expected one-step reward r^i(pi), shape (2, S)."""
    w = _joint_weights(game, strategy)
    out = np.empty((2, game.n_states))
    out[0] = np.bincount(game.x_of_joint, weights=w * game.r1, minlength=game.n_states)
    out[1] = np.bincount(game.x_of_joint, weights=w * game.r2, minlength=game.n_states)
    return out


def transition_matrix(game: StochasticGame, strategy: JointStrategy) -> np.ndarray:
    """Dense state-to-state matrix P(pi); rows sum to one."""
    w = _joint_weights(game, strategy)
    counts = np.diff(game.trans_indptr)
    j_of_entry = np.repeat(np.arange(game.n_joint), counts)
    x_of_entry = game.x_of_joint[j_of_entry]
    key = x_of_entry * game.n_states + game.trans_y
    flat = np.bincount(key, weights=w[j_of_entry] * game.trans_p,
                       minlength=game.n_states * game.n_states)
    return flat.reshape(game.n_states, game.n_states)


def strategy_value(game: StochasticGame, strategy: JointStrategy) -> np.ndarray:
    """Discounted value of a fixed strategy pair: v^i = (I - beta P)^{-1} r^i.

    The result satisfies the evaluation equation to VALUE_RESIDUAL_TOL.
    """
    p = transition_matrix(game, strategy)
    r = expected_reward(game, strategy)
    a = np.eye(game.n_states) - game.discount * p
    try:
        v = np.linalg.solve(a, r.T).T
    except np.linalg.LinAlgError as exc:  # cannot occur for discount < 1
        raise RuntimeError("strategy evaluation solve failed") from exc
    resid = np.max(np.abs(v - r - game.discount * (p @ v.T).T))
    if resid > VALUE_RESIDUAL_TOL * (1.0 + np.max(np.abs(v))):
        raise RuntimeError(f"strategy evaluation residual {resid:g} too large")
    return v


def bellman_q(game: StochasticGame, v: np.ndarray, strategy: JointStrategy,
              player: int, state: int) -> np.ndarray:
    """Marginal action values Q^i(x, a^i) against the opponent's mixture.

    ``player`` is 0 or 1; ``v`` has shape (2, S).
    """
    if player not in (0, 1):
        raise ValueError("player must be 0 or 1")
    if not 0 <= state < game.n_states:
        raise ValueError(f"state {state} out of range")
    v = np.asarray(v, dtype=float)
    lo, hi = game.ja_base[state], game.ja_base[state + 1]
    js = np.arange(lo, hi)
    cont = np.zeros(len(js))
    for t, j in enumerate(js):
        ys, ps = game.trans_y[game.trans_indptr[j]:game.trans_indptr[j + 1]], \
            game.trans_p[game.trans_indptr[j]:game.trans_indptr[j + 1]]
        cont[t] = ps @ v[player, ys]
    r = game.r1[js] if player == 0 else game.r2[js]
    q_joint = r + game.discount * cont
    own = game.a1_of_joint[js] if player == 0 else game.a2_of_joint[js]
    opp = game.a2_of_joint[js] if player == 0 else game.a1_of_joint[js]
    opp_probs = np.asarray(strategy.probs[1 - player][state], dtype=float)
    m_own = int(game.n_actions[state, player])
    if len(opp_probs) != game.n_actions[state, 1 - player]:
        raise ValueError("opponent mixture does not match the game")
    return np.bincount(own, weights=opp_probs[opp] * q_joint, minlength=m_own)


# -- game file format --------------------------------------------------------

def game_to_dict(game: StochasticGame) -> dict:
    transitions = []
    rewards = []
    for j in range(game.n_joint):
        x = int(game.x_of_joint[j])
        a1 = int(game.a1_of_joint[j])
        a2 = int(game.a2_of_joint[j])
        lo, hi = game.trans_indptr[j], game.trans_indptr[j + 1]
        probs = [[int(y), float(p)] for y, p in zip(game.trans_y[lo:hi], game.trans_p[lo:hi])]
        transitions.append({"x": x, "a1": a1, "a2": a2, "probs": probs})
        if game.r1[j] != 0.0 or game.r2[j] != 0.0:
            rewards.append({"x": x, "a1": a1, "a2": a2, "r": [float(game.r1[j]), float(game.r2[j])]})
    return {
        "discount": game.discount,
        "states": game.n_states,
        "actions": game.n_actions.tolist(),
        "successors": [u.tolist() for u in game.successors],
        "transitions": transitions,
        "rewards": rewards,
    }


def save_game(game: StochasticGame, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(game_to_dict(game), fh)


def game_from_dict(doc: dict) -> StochasticGame:
    try:
        discount = float(doc["discount"])
        n_states = int(doc["states"])
        n_actions = np.asarray(doc["actions"], dtype=np.int64)
        successors = [np.asarray(u, dtype=np.int64) for u in doc["successors"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed game document: {exc}") from exc
    if n_actions.shape != (n_states, 2):
        raise ValueError("actions table must list [m1, m2] for every state")
    transitions = {}
    for row in doc.get("transitions", []):
        key = (int(row["x"]), int(row["a1"]), int(row["a2"]))
        transitions[key] = [(int(y), float(p)) for y, p in row["probs"]]
    rewards = {}
    for row in doc.get("rewards", []):
        key = (int(row["x"]), int(row["a1"]), int(row["a2"]))
        r = row["r"]
        rewards[key] = (float(r[0]), float(r[1]))
    game = StochasticGame.from_tables(discount, n_actions, successors, transitions, rewards)
    problems = validate_game(game)
    if problems:
        raise ValueError("invalid game file: " + "; ".join(problems[:5]))
    return game


def load_game(path) -> StochasticGame:
    with open(path, "r", encoding="utf-8") as fh:
        return game_from_dict(json.load(fh))
