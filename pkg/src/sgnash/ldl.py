"""Sparse symmetric LDL^T factorisation with fill-reducing ordering.

Assembles the constraint-gradient Gram matrix

    H = G^T G - diag(w * g)

which is positive definite at strictly feasible points (g < 0, w > 0), and
solves H x = b through an up-looking LDL^T factorisation over a permuted
pattern.  The symbolic analysis (ordering, elimination tree, column counts)
depends only on the sparsity pattern and is cached, so repeated
factorisations of structurally identical matrices pay for numeric work only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit

NEAR_ZERO_PIVOT = 1e-12
DENSE_FALLBACK_N = 500


class SingularMatrixError(RuntimeError):
    def __init__(self, pivot: int):
        super().__init__(f"zero pivot encountered at elimination step {pivot}")
        self.pivot = pivot


@dataclass(eq=False)
class SparseSymmetric:
    """Symmetric matrix stored as the lower triangle in CSC form."""

    n: int
    lower: sp.csc_matrix

    @property
    def fill_fraction(self) -> float:
        """Structural nonzeros of the full matrix over n^2."""
        diag_nnz = int(np.count_nonzero(self.lower.diagonal()))
        full_nnz = 2 * self.lower.nnz - diag_nnz
        return full_nnz / float(self.n) ** 2

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.lower.data))) if self.lower.nnz else 0.0

    def to_dense(self) -> np.ndarray:
        low = self.lower.toarray()
        return low + np.tril(low, -1).T


@dataclass(eq=False)
class LdlSymbolic:
    """Pattern-only analysis shared by repeated factorisations."""

    n: int
    perm: np.ndarray
    upper_indptr: np.ndarray
    upper_indices: np.ndarray
    data_order: np.ndarray  # lower.data slot feeding each upper entry
    parent: np.ndarray
    l_indptr: np.ndarray
    key_indptr: np.ndarray = field(default=None, repr=False)
    key_indices: np.ndarray = field(default=None, repr=False)


@dataclass(eq=False)
class LdlFactors:
    """P H P^T = L D L^T with unit lower-triangular L and diagonal D."""

    n: int
    l_mat: sp.csc_matrix
    d: np.ndarray
    perm: np.ndarray
    near_zero_pivots: np.ndarray

    def reconstruction(self) -> np.ndarray:
        l_dense = self.l_mat.toarray() + np.eye(self.n)
        return l_dense @ np.diag(self.d) @ l_dense.T


def build_H(g_mat: sp.spmatrix, g: np.ndarray, w) -> SparseSymmetric:
    """Gram matrix of constraint gradients with the weighted slack diagonal."""
    g = np.asarray(g, dtype=float)
    n = g_mat.shape[1]
    if g.shape != (n,):
        raise ValueError("constraint value vector does not match the gradient matrix")
    w = np.broadcast_to(np.asarray(w, dtype=float), (n,))
    if np.any(w <= 0):
        raise ValueError("constraint weights must be positive")
    gram = (g_mat.T @ g_mat).tocsc()
    gram = gram + sp.diags(-w * g, format="csc")
    lower = sp.tril(gram, format="csc")
    return SparseSymmetric(n, lower)


def _amd_order(lower: sp.csc_matrix) -> np.ndarray:
    """Approximate minimum degree ordering of the pattern; RCM fallback."""
    n = lower.shape[0]
    if n <= 2:
        return np.arange(n)
    try:
        from cvxopt import amd, matrix, spmatrix

        coo = lower.tocoo()
        a = spmatrix(
            matrix(np.ones(len(coo.row))),
            matrix(coo.row.astype(np.int32)),
            matrix(coo.col.astype(np.int32)),
            (n, n),
        )
        return np.array(list(amd.order(a)), dtype=np.int64)
    except Exception:
        full = lower + sp.triu(lower.T, 1)
        return np.asarray(
            sp.csgraph.reverse_cuthill_mckee(full.tocsr(), symmetric_mode=True),
            dtype=np.int64,
        )


def symbolic(matrix: SparseSymmetric, perm: np.ndarray | None = None) -> LdlSymbolic:
    """Ordering, permuted upper pattern and elimination tree of the matrix."""
    n = matrix.n
    lower = matrix.lower.tocsc()
    if perm is None:
        perm = _amd_order(lower)
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n)
    coo = lower.tocoo()
    pi = inv[coo.row]
    pj = inv[coo.col]
    ui = np.minimum(pi, pj)
    uj = np.maximum(pi, pj)
    order = np.lexsort((ui, uj))
    upper_indices = ui[order]
    upper_indptr = np.concatenate(([0], np.cumsum(np.bincount(uj, minlength=n))))
    parent, l_nz = _etree_counts(n, upper_indptr, upper_indices)
    l_indptr = np.concatenate(([0], np.cumsum(l_nz)))
    return LdlSymbolic(
        n=n,
        perm=perm,
        upper_indptr=upper_indptr,
        upper_indices=upper_indices,
        data_order=order,
        parent=parent,
        l_indptr=l_indptr,
    )


def factor(matrix: SparseSymmetric, symb: LdlSymbolic | None = None) -> LdlFactors:
    """LDL^T factors of the permuted matrix.

    Near-zero pivots (relative to max |H|) are reported in the result; an
    exactly zero pivot falls back to a dense diagonally-pivoted factorisation
    for small matrices and raises SingularMatrixError otherwise.
    """
    n = matrix.n
    if symb is None:
        symb = symbolic(matrix)
    upper_data = matrix.lower.data[symb.data_order]
    l_indices = np.empty(symb.l_indptr[-1], dtype=np.int64)
    l_data = np.empty(symb.l_indptr[-1])
    d = np.empty(n)
    bad = _ldl_numeric(
        n, symb.upper_indptr, symb.upper_indices, upper_data,
        symb.parent, symb.l_indptr, l_indices, l_data, d,
    )
    scale = matrix.max_abs()
    if bad >= 0:
        if n <= DENSE_FALLBACK_N:
            return _factor_dense(matrix)
        raise SingularMatrixError(int(bad))
    near = np.nonzero(np.abs(d) < NEAR_ZERO_PIVOT * max(scale, 1e-300))[0]
    l_mat = sp.csc_matrix((l_data, l_indices, symb.l_indptr), shape=(n, n))
    return LdlFactors(n=n, l_mat=l_mat, d=d, perm=symb.perm, near_zero_pivots=near)


def _factor_dense(matrix: SparseSymmetric) -> LdlFactors:
    """Dense LDL^T with symmetric diagonal pivoting (largest remaining pivot)."""
    n = matrix.n
    a = matrix.to_dense()
    perm = np.arange(n)
    l_dense = np.zeros((n, n))
    d = np.zeros(n)
    scale = matrix.max_abs()
    for k in range(n):
        rest = np.arange(k, n)
        pick = int(rest[np.argmax(np.abs(np.diag(a)[k:]))])
        if pick != k:
            a[[k, pick], :] = a[[pick, k], :]
            a[:, [k, pick]] = a[:, [pick, k]]
            l_dense[[k, pick], :k] = l_dense[[pick, k], :k]
            perm[[k, pick]] = perm[[pick, k]]
        d[k] = a[k, k]
        if d[k] == 0.0:
            raise SingularMatrixError(k)
        l_dense[k + 1:, k] = a[k + 1:, k] / d[k]
        a[k + 1:, k + 1:] -= np.outer(l_dense[k + 1:, k], a[k + 1:, k])
        a[k + 1:, k] = 0.0
        a[k, k + 1:] = 0.0
    near = np.nonzero(np.abs(d) < NEAR_ZERO_PIVOT * max(scale, 1e-300))[0]
    return LdlFactors(
        n=n,
        l_mat=sp.csc_matrix(np.tril(l_dense, -1)),
        d=d,
        perm=perm,
        near_zero_pivots=near,
    )


def solve(factors: LdlFactors, b: np.ndarray) -> np.ndarray:
    """Solve H x = b from the factors of P H P^T."""
    b = np.asarray(b, dtype=float)
    if b.shape != (factors.n,):
        raise ValueError("right-hand side has the wrong length")
    if np.any(factors.d == 0.0):
        raise SingularMatrixError(int(np.argmin(np.abs(factors.d))))
    y = b[factors.perm].copy()
    l_mat = factors.l_mat
    _forward_unit(factors.n, l_mat.indptr, l_mat.indices, l_mat.data, y)
    y /= factors.d
    _backward_unit_t(factors.n, l_mat.indptr, l_mat.indices, l_mat.data, y)
    x = np.empty_like(y)
    x[factors.perm] = y
    return x


@njit(cache=True)
def _etree_counts(n, up, ui):
    parent = np.full(n, -1, dtype=np.int64)
    flag = np.full(n, -1, dtype=np.int64)
    l_nz = np.zeros(n, dtype=np.int64)
    for k in range(n):
        parent[k] = -1
        flag[k] = k
        for p in range(up[k], up[k + 1]):
            i = ui[p]
            while flag[i] != k:
                if parent[i] == -1:
                    parent[i] = k
                l_nz[i] += 1
                flag[i] = k
                i = parent[i]
    return parent, l_nz


@njit(cache=True)
def _ldl_numeric(n, up, ui, ux, parent, lp, li, lx, d):
    """Up-looking numeric LDL^T; returns the failing pivot index or -1."""
    y = np.zeros(n)
    pattern = np.empty(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    flag = np.full(n, -1, dtype=np.int64)
    lnz = np.zeros(n, dtype=np.int64)
    for k in range(n):
        top = n
        flag[k] = k
        y[k] = 0.0
        for p in range(up[k], up[k + 1]):
            i = ui[p]
            y[i] += ux[p]
            length = 0
            while flag[i] != k:
                stack[length] = i
                length += 1
                flag[i] = k
                i = parent[i]
            while length > 0:
                top -= 1
                length -= 1
                pattern[top] = stack[length]
        d[k] = y[k]
        y[k] = 0.0
        for idx in range(top, n):
            i = pattern[idx]
            yi = y[i]
            y[i] = 0.0
            p2 = lp[i] + lnz[i]
            for p in range(lp[i], p2):
                y[li[p]] -= lx[p] * yi
            l_ki = yi / d[i]
            d[k] -= l_ki * yi
            li[p2] = k
            lx[p2] = l_ki
            lnz[i] += 1
        if d[k] == 0.0:
            return k
    return -1


@njit(cache=True)
def _forward_unit(n, lp, li, lx, y):
    for j in range(n):
        yj = y[j]
        if yj != 0.0:
            for p in range(lp[j], lp[j + 1]):
                y[li[p]] -= lx[p] * yj


@njit(cache=True)
def _backward_unit_t(n, lp, li, lx, y):
    for j in range(n - 1, -1, -1):
        acc = y[j]
        for p in range(lp[j], lp[j + 1]):
            acc -= lx[p] * y[li[p]]
        y[j] = acc


class LdlCache:
    """Reuses symbolic analysis across factorisations with identical patterns."""

    def __init__(self):
        self._symb = None
        self._indptr = None
        self._indices = None
        self.factor_calls = 0

    def factor(self, matrix: SparseSymmetric) -> LdlFactors:
        self.factor_calls += 1
        lower = matrix.lower
        if (
            self._symb is None
            or self._indptr.shape != lower.indptr.shape
            or self._indices.shape != lower.indices.shape
            or not np.array_equal(self._indptr, lower.indptr)
            or not np.array_equal(self._indices, lower.indices)
        ):
            self._symb = symbolic(matrix)
            self._indptr = lower.indptr.copy()
            self._indices = lower.indices.copy()
        return factor(matrix, self._symb)
