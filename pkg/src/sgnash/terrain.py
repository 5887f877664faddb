"""Two-agent terrain exploration benchmark as a stochastic game.

Two agents move on a square grid collecting objects at known positions.
Movement is noisy: aiming at a cell lands the agent on any cell of its
own neighbourhood with probability proportional to ``2**-d1`` of the
Manhattan distance from the aimed cell.  Colliding agents are penalised,
collecting an object pays one unit, and the game moves to an absorbing
terminal state once every object is collected.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .games import StochasticGame

COLLISION_PENALTY = -0.5
OBJECT_REWARD = 1.0


@dataclass(frozen=True)
class TerrainSpec:
    """Generator parameters: a side x side grid with objects at ``objects``."""

    side: int
    objects: tuple
    discount: float = 0.75
    starts: tuple | None = None  # informational; the game itself has no start state

    def __post_init__(self):
        objs = tuple(tuple(int(c) for c in o) for o in self.objects)
        object.__setattr__(self, "objects", objs)
        if self.side < 1:
            raise ValueError("grid side must be at least 1")
        if len(objs) < 1:
            raise ValueError("at least one object is required")
        if len(set(objs)) != len(objs):
            raise ValueError("object positions must be distinct")
        for o in objs:
            if not (0 <= o[0] < self.side and 0 <= o[1] < self.side):
                raise ValueError(f"object {o} outside the {self.side}x{self.side} grid")
        if not (0.0 < self.discount < 1.0):
            raise ValueError("discount must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class TerrainState:
    """Full game state: both agent positions, collected flags, terminal marker."""

    pos1: tuple
    pos2: tuple
    collected: tuple
    terminal: bool = False


def _cells(side):
    return [(x, y) for x in range(side) for y in range(side)]


def _cell_id(pos, side):
    return pos[0] * side + pos[1]


def neighborhood(pos, side):
    """Cells within Chebyshev distance one of ``pos``, in cell-id order."""
    x, y = pos
    out = []
    for cx in range(max(0, x - 1), min(side, x + 2)):
        for cy in range(max(0, y - 1), min(side, y + 2)):
            out.append((cx, cy))
    return out


def agent_transition(pos, target, side):
    """Landing distribution over the neighbourhood of ``pos`` when aiming at ``target``.

    Weights are ``2**-d1(target, cell)``, normalised to a probability vector.
    """
    nb = neighborhood(pos, side)
    if tuple(target) not in nb:
        raise ValueError(f"target {target} is not within reach of {pos}")
    d1 = np.array([abs(target[0] - c[0]) + abs(target[1] - c[1]) for c in nb], dtype=float)
    w = np.power(2.0, -d1)
    return nb, w / w.sum()


def terrain_reward(state: TerrainState, landing: TerrainState, objects) -> tuple:
    """Per-agent reward of one realised move from ``state`` to ``landing``.

    Collision (both agents on one cell while objects remain) costs 1/2 each;
    landing on an object that was uncollected in ``state`` pays one unit.
    Both terms apply when agents collect the same object simultaneously.
    """
    if state.terminal or landing.terminal:
        return (0.0, 0.0)
    r = [0.0, 0.0]
    if landing.pos1 == landing.pos2 and not all(landing.collected):
        r[0] += COLLISION_PENALTY
        r[1] += COLLISION_PENALTY
    for i, pos in enumerate((landing.pos1, landing.pos2)):
        for j, obj in enumerate(objects):
            if pos == obj and not state.collected[j]:
                r[i] += OBJECT_REWARD
    return tuple(r)


def build_terrain_game(spec: TerrainSpec):
    """Generate the stochastic game and its state table.

    Returns ``(game, states)`` where ``states[i]`` describes state index ``i``;
    the absorbing terminal state is last.
    """
    side = spec.side
    cells = _cells(side)
    n_cells = len(cells)
    objects = spec.objects
    k_obj = len(objects)
    obj_id = {o: j for j, o in enumerate(objects)}

    flag_combos = [o for o in itertools.product((False, True), repeat=k_obj) if not all(o)]

    # enumerate feasible states: no agent may sit on an uncollected object
    states = []
    index = {}
    for o in flag_combos:
        blocked = {obj for j, obj in enumerate(objects) if not o[j]}
        allowed = [c for c in cells if c not in blocked]
        for p1 in allowed:
            for p2 in allowed:
                index[(p1, p2, o)] = len(states)
                states.append(TerrainState(p1, p2, o))
    if not states:
        raise ValueError("no feasible states: agents cannot avoid the object cells")
    terminal = len(states)
    states.append(TerrainState((-1, -1), (-1, -1), (True,) * k_obj, terminal=True))
    n_states = len(states)

    # per-cell action sets and landing distributions
    nb_ids = [np.array([_cell_id(c, side) for c in neighborhood(pos, side)]) for pos in cells]
    move = {}
    for ci, pos in enumerate(cells):
        nb = neighborhood(pos, side)
        for k, target in enumerate(nb):
            move[(ci, k)] = agent_transition(pos, target, side)[1]

    # per-flag-combo landing tables: successor state id and per-agent reward
    hits = np.zeros((n_cells, k_obj), dtype=bool)
    for j, o in enumerate(objects):
        hits[_cell_id(o, side), j] = True
    sid_table = {}
    r1_table = {}
    r2_table = {}
    for o in flag_combos:
        sid = np.empty((n_cells, n_cells), dtype=np.int64)
        rw1 = np.zeros((n_cells, n_cells))
        rw2 = np.zeros((n_cells, n_cells))
        ovec = np.array(o)
        for c1 in range(n_cells):
            bonus1 = OBJECT_REWARD if (hits[c1] & ~ovec).any() else 0.0
            for c2 in range(n_cells):
                o_next = ovec | hits[c1] | hits[c2]
                if o_next.all():
                    sid[c1, c2] = terminal
                else:
                    sid[c1, c2] = index[(cells[c1], cells[c2], tuple(o_next))]
                pen = COLLISION_PENALTY if (c1 == c2 and not o_next.all()) else 0.0
                bonus2 = OBJECT_REWARD if (hits[c2] & ~ovec).any() else 0.0
                rw1[c1, c2] = pen + bonus1
                rw2[c1, c2] = pen + bonus2
        sid_table[o] = sid
        r1_table[o] = rw1
        r2_table[o] = rw2

    # assemble flat transition and reward tables state by state
    n_actions = np.ones((n_states, 2), dtype=np.int64)
    for s, st in enumerate(states[:-1]):
        n_actions[s, 0] = len(nb_ids[_cell_id(st.pos1, side)])
        n_actions[s, 1] = len(nb_ids[_cell_id(st.pos2, side)])

    ys_parts, ps_parts, counts = [], [], []
    r1_parts, r2_parts = [], []
    successors = []
    for s, st in enumerate(states[:-1]):
        c1 = _cell_id(st.pos1, side)
        c2 = _cell_id(st.pos2, side)
        o = st.collected
        sid = sid_table[o]
        rw1 = r1_table[o]
        rw2 = r2_table[o]
        land1, land2 = nb_ids[c1], nb_ids[c2]
        sub_sid = sid[land1[:, None], land2[None, :]]
        sub_r1 = rw1[land1[:, None], land2[None, :]]
        sub_r2 = rw2[land1[:, None], land2[None, :]]
        seen = set()
        m1 = n_actions[s, 0]
        m2 = n_actions[s, 1]
        for a2 in range(m2):
            p2 = move[(c2, a2)]
            for a1 in range(m1):
                p1 = move[(c1, a1)]
                prob = np.multiply.outer(p1, p2)
                r1_parts.append(float((prob * sub_r1).sum()))
                r2_parts.append(float((prob * sub_r2).sum()))
                flat_sid = sub_sid.ravel()
                flat_p = prob.ravel()
                tmask = flat_sid == terminal
                if tmask.any():
                    ys = np.concatenate((flat_sid[~tmask], [terminal]))
                    ps = np.concatenate((flat_p[~tmask], [flat_p[tmask].sum()]))
                else:
                    ys, ps = flat_sid, flat_p
                ys_parts.append(ys)
                ps_parts.append(ps)
                counts.append(len(ys))
        seen.update(np.unique(sub_sid).tolist())
        successors.append(np.array(sorted(seen), dtype=np.int64))
    # absorbing terminal state
    ys_parts.append(np.array([terminal], dtype=np.int64))
    ps_parts.append(np.array([1.0]))
    counts.append(1)
    r1_parts.append(0.0)
    r2_parts.append(0.0)
    successors.append(np.array([terminal], dtype=np.int64))

    trans_indptr = np.concatenate(([0], np.cumsum(counts)))
    game = StochasticGame(
        discount=spec.discount,
        n_actions=n_actions,
        successors=successors,
        trans_indptr=trans_indptr,
        trans_y=np.concatenate(ys_parts),
        trans_p=np.concatenate(ps_parts),
        r1=np.array(r1_parts),
        r2=np.array(r2_parts),
    )
    return game, states
