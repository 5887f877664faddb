"""Shared generators and oracles for the test suite."""
from __future__ import annotations

import numpy as np

from sgnash.games import JointStrategy, StochasticGame, strategy_value
from sgnash.nlp import GameNlp


def random_game(rng, n_states=4, max_actions=3, max_successors=3,
                discount=None, reward_scale=1.0) -> StochasticGame:
    """A dense-ish random game with ragged action sets and sparse successors."""
    discount = discount if discount is not None else rng.uniform(0.2, 0.9)
    n_actions = rng.integers(1, max_actions + 1, size=(n_states, 2))
    successors = []
    transitions = {}
    rewards = {}
    for x in range(n_states):
        k = min(n_states, rng.integers(1, max_successors + 1))
        u = np.sort(rng.choice(n_states, size=k, replace=False))
        successors.append(u)
        for a1 in range(n_actions[x, 0]):
            for a2 in range(n_actions[x, 1]):
                p = rng.random(k) + 1e-3
                p /= p.sum()
                transitions[(x, a1, a2)] = list(zip(u.tolist(), p.tolist()))
                rewards[(x, a1, a2)] = (rng.normal() * reward_scale,
                                        rng.normal() * reward_scale)
    return StochasticGame.from_tables(discount, n_actions, successors, transitions, rewards)


def single_state_game(r1, r2, discount=0.5) -> StochasticGame:
    """One absorbing state whose stage game has payoff matrices r1, r2 (a1 x a2)."""
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    m1, m2 = r1.shape
    transitions = {}
    rewards = {}
    for a1 in range(m1):
        for a2 in range(m2):
            transitions[(0, a1, a2)] = [(0, 1.0)]
            rewards[(0, a1, a2)] = (r1[a1, a2], r2[a1, a2])
    return StochasticGame.from_tables(discount, [[m1, m2]], [[0]], transitions, rewards)


def random_strategy(game, rng, interior=True) -> JointStrategy:
    probs = []
    for i in range(2):
        pl = []
        for x in range(game.n_states):
            m = int(game.n_actions[x, i])
            p = rng.random(m) + (0.05 if interior else 0.0)
            pl.append(p / p.sum())
        probs.append(pl)
    return JointStrategy(probs)


def feasible_point(game, rng, margin=0.25) -> np.ndarray:
    """Strictly feasible packed point: interior strategy plus padded values.

    Raising both value vectors by a constant c shrinks every value-constraint
    slack by (1 - beta) * c, so padding past the worst slack is feasible.
    """
    nlp = GameNlp.for_game(game)
    strat = random_strategy(game, rng, interior=True)
    v = strategy_value(game, strat)
    x = nlp.pack(v, strat)
    ev = nlp.evaluate(x)
    worst = max(ev.h1.max(), ev.h2.max())
    pad = (worst + margin) / (1.0 - game.discount)
    v_pad = v + pad
    return nlp.pack(v_pad, strat)


def fd_gradient(fun, x, step=1e-6):
    """Central finite differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = step
        out[i] = (fun(x + e) - fun(x - e)) / (2 * step)
    return out


def fd_jacobian(fun, x, step=1e-6):
    """Central finite differences of a vector function, columns per coordinate."""
    x = np.asarray(x, dtype=float)
    f0 = fun(x)
    out = np.zeros((len(x), len(f0)))
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = step
        out[i] = (fun(x + e) - fun(x - e)) / (2 * step)
    return out
