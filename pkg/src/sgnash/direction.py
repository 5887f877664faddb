"""Two-stage feasible descent directions.

Stage one solves, for multipliers gamma0 and direction S0,

    S0 = -(grad_f + G gamma0),      S0 . grad_g_j = -w_j gamma0_j g_j,

which reduces to the symmetric system H gamma0 = -G^T grad_f with
H = G^T G - diag(w g).  Stage two adds a uniform push -rho ||S0||^2 away
from every constraint, tilting the descent direction into the interior.

Two equivalent solve routes are provided.  The "ldl" route factors the
n x n matrix H directly.  The "primal" route eliminates gamma and solves
(I + G D^{-1} G^T) S = rhs in variable space with D = diag(-w g), which is
much smaller whenever constraints outnumber variables; both routes satisfy
the same stage identities, which the solver re-checks every iteration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import ldl

PRIMAL_THRESHOLD = 2000


@dataclass
class DirectionResult:
    s0: np.ndarray
    s: np.ndarray
    gamma0: np.ndarray
    gamma: np.ndarray
    rho_used: float
    norm_s0: float
    zero: bool
    route: str


@dataclass
class StageResiduals:
    """Scaled residuals of the two stage systems (all should be tiny)."""

    stage1_direction: float
    stage1_slope: float
    stage2_direction: float
    stage2_slope: float

    @property
    def worst(self) -> float:
        return max(self.stage1_direction, self.stage1_slope,
                   self.stage2_direction, self.stage2_slope)


def _pick_route(route: str, n_cons: int) -> str:
    if route == "auto":
        return "primal" if n_cons > PRIMAL_THRESHOLD else "ldl"
    if route not in ("ldl", "primal"):
        raise ValueError(f"unknown route {route!r}")
    return route


def two_stage_direction(grad_f: np.ndarray, g_mat: sp.csc_matrix, g: np.ndarray,
                        *, w=1.0, ts_alpha: float = 0.5, rho0: float = 0.9,
                        route: str = "auto", zero_tol: float = 1e-9,
                        cache: ldl.LdlCache | None = None) -> DirectionResult:
    """Compute the feasible descent direction and multiplier estimates.

    Requires a strictly feasible point (every g_j < 0).  One symmetric
    factorisation serves both stage solves.
    """
    g = np.asarray(g, dtype=float)
    grad_f = np.asarray(grad_f, dtype=float)
    n_cons = g.shape[0]
    if g_mat.shape[1] != n_cons:
        raise ValueError("gradient matrix and constraint vector disagree")
    if g.max() >= 0:
        raise ValueError("two-stage direction requires a strictly feasible point")
    if not (0.0 < ts_alpha < 1.0):
        raise ValueError("ts_alpha must lie in (0, 1)")
    if rho0 <= 0:
        raise ValueError("rho0 must be positive")
    w = np.broadcast_to(np.asarray(w, dtype=float), (n_cons,))
    route = _pick_route(route, n_cons)
    cache = cache if cache is not None else ldl.LdlCache()
    dvec = -(w * g)

    if route == "ldl":
        h_mat = ldl.build_H(g_mat, g, w)
        factors = cache.factor(h_mat)
        rhs = -(g_mat.T @ grad_f)
        gamma0 = ldl.solve(factors, rhs)
        s0 = -(grad_f + g_mat @ gamma0)
    else:
        col_scale = 1.0 / np.sqrt(dvec)
        gs = g_mat.copy()
        counts = np.diff(gs.indptr)
        gs.data *= np.repeat(col_scale, counts)
        m_mat = (gs @ gs.T).tocsc()
        m_mat = m_mat + sp.identity(g_mat.shape[0], format="csc")
        factors = cache.factor(ldl.SparseSymmetric(g_mat.shape[0], sp.tril(m_mat, format="csc")))
        s0 = ldl.solve(factors, -grad_f)
        gamma0 = (g_mat.T @ s0) / dvec

    norm_s0 = float(np.linalg.norm(s0))
    if norm_s0 <= zero_tol * (1.0 + float(np.linalg.norm(grad_f))):
        return DirectionResult(
            s0=s0, s=np.zeros_like(s0), gamma0=gamma0, gamma=gamma0,
            rho_used=rho0, norm_s0=norm_s0, zero=True, route=route,
        )

    rho = rho0
    gsum = float(gamma0.sum())
    if gsum > 0:
        rho1 = (1.0 - ts_alpha) / gsum
        if rho1 < rho:
            rho = rho1 / 2.0
    push = rho * norm_s0 ** 2

    if route == "ldl":
        # substituting the direction display into the slope display yields
        # H gamma = -G^T grad_f + push (sign checked by the stage residuals)
        gamma = ldl.solve(factors, -(g_mat.T @ grad_f) + push)
        s = -(grad_f + g_mat @ gamma)
    else:
        s = ldl.solve(factors, -grad_f - push * (g_mat @ (1.0 / dvec)))
        gamma = ((g_mat.T @ s) + push) / dvec

    return DirectionResult(
        s0=s0, s=s, gamma0=gamma0, gamma=gamma,
        rho_used=rho, norm_s0=norm_s0, zero=False, route=route,
    )


def stage_residuals(res: DirectionResult, grad_f: np.ndarray, g_mat: sp.csc_matrix,
                    g: np.ndarray, w=1.0) -> StageResiduals:
    """Verify the literal stage identities (direction and slope displays)."""
    g = np.asarray(g, dtype=float)
    w = np.broadcast_to(np.asarray(w, dtype=float), g.shape)
    gg0 = g_mat @ res.gamma0
    r1a = np.max(np.abs(res.s0 + grad_f + gg0))
    r1a /= 1.0 + np.max(np.abs(grad_f)) + np.max(np.abs(gg0))
    slope0 = g_mat.T @ res.s0
    target0 = -(w * res.gamma0 * g)
    r1b = np.max(np.abs(slope0 - target0) / (1.0 + np.abs(slope0) + np.abs(target0)))
    if res.zero:
        return StageResiduals(float(r1a), float(r1b), 0.0, 0.0)
    push = res.rho_used * res.norm_s0 ** 2
    gg = g_mat @ res.gamma
    r2a = np.max(np.abs(res.s + grad_f + gg))
    r2a /= 1.0 + np.max(np.abs(grad_f)) + np.max(np.abs(gg))
    slope = g_mat.T @ res.s
    target = -(w * res.gamma * g) - push
    r2b = np.max(np.abs(slope - target) / (1.0 + np.abs(slope) + np.abs(target)))
    return StageResiduals(float(r1a), float(r1b), float(r2a), float(r2b))
