"""Geometric multigrid V-cycles on the uniform Q1 grid hierarchy.

Coarse operators are Galerkin products R A P with bilinear prolongation P
and R = P'.  Smoothing is lexicographic Gauss-Seidel: forward sweeps before
the coarse correction, backward sweeps after.  The coarsest grid (level 2,
nine unknowns) is solved exactly.

Galerkin coarsening of an SUPG convection-diffusion matrix loses the
streamline diffusion that the coarse mesh needs, and Gauss-Seidel then
diverges on coarse levels.  Callers can pass rediscretized coarse
operators instead (see ``rediscretized_levels``).

With this ordering the V-cycle for A' is exactly the transpose of the
V-cycle for A, which is what keeps (L+Mhat)^{-T} (M+Theta_y) (L+Mhat)^{-1}
symmetric when both factors are replaced by V-cycles.
"""

from __future__ import annotations

import logging

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)

COARSEST = 2


class MultigridDivergence(ArithmeticError):
    pass


@numba.njit(cache=True)
def _gs_forward(indptr, indices, data, diag, b, x, sweeps):
    n = b.shape[0]
    for _ in range(sweeps):
        for i in range(n):
            s = b[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i:
                    s -= data[k] * x[j]
            x[i] = s / diag[i]


@numba.njit(cache=True)
def _gs_backward(indptr, indices, data, diag, b, x, sweeps):
    n = b.shape[0]
    for _ in range(sweeps):
        for i in range(n - 1, -1, -1):
            s = b[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i:
                    s -= data[k] * x[j]
            x[i] = s / diag[i]


def gauss_seidel(A, b, x, sweeps: int = 1, backward: bool = False):
    """In-place Gauss-Seidel sweeps on x for A x = b (A in CSR)."""
    A = sp.csr_matrix(A)
    diag = A.diagonal()
    if np.any(diag == 0):
        raise ZeroDivisionError("Gauss-Seidel needs a nonzero diagonal")
    fn = _gs_backward if backward else _gs_forward
    fn(A.indptr, A.indices, A.data, diag, np.asarray(b, dtype=float), x, int(sweeps))
    return x


def prolongation_1d(level: int) -> sp.csr_matrix:
    """Linear interpolation from 2**(level-1)-1 to 2**level-1 interior nodes."""
    nf = 2 ** level - 1
    nc = 2 ** (level - 1) - 1
    rows, cols, vals = [], [], []
    for j in range(nc):
        i = 2 * j + 1
        rows += [i - 1, i, i + 1]
        cols += [j, j, j]
        vals += [0.5, 1.0, 0.5]
    return sp.csr_matrix((vals, (rows, cols)), shape=(nf, nc))


def prolongation(level: int) -> sp.csr_matrix:
    """Bilinear prolongation between 2D interior grids (x1 fastest)."""
    p = prolongation_1d(level)
    return sp.kron(p, p, format="csr")


def level_of(n: int) -> int:
    m = int(round(np.sqrt(n))) + 1
    level = int(round(np.log2(m)))
    if (2 ** level - 1) ** 2 != n:
        raise ValueError(f"dimension {n} is not a (2^l - 1)^2 grid")
    return level


class _Level:
    __slots__ = ("A", "diag", "P")

    def __init__(self, A, P):
        A = sp.csr_matrix(A)
        A.sort_indices()
        self.A = A
        self.diag = A.diagonal()
        if np.any(self.diag == 0):
            raise ZeroDivisionError("zero diagonal entry in multigrid level")
        self.P = P


class MgHierarchy:
    """V-cycle hierarchy for a grid operator at level l >= 2.

    ``coarse_ops`` optionally lists the operators for levels l-1, ..., 2;
    by default they are Galerkin products.
    """

    def __init__(self, A, cycles: int = 3, pre: int = 5, post: int = 5, check: bool = True,
                 coarse_ops=None):
        A = sp.csr_matrix(A, dtype=float)
        self.level = level_of(A.shape[0])
        self.cycles = int(cycles)
        self.pre = int(pre)
        self.post = int(post)
        self.check = check
        self.levels = []
        if coarse_ops is not None and len(coarse_ops) != max(self.level - COARSEST, 0):
            raise ValueError("need one coarse operator per level below the finest")
        cur = A
        for i, lev in enumerate(range(self.level, COARSEST, -1)):
            P = prolongation(lev)
            self.levels.append(_Level(cur, P))
            if coarse_ops is None:
                cur = (P.T @ cur @ P).tocsr()
            else:
                cur = sp.csr_matrix(coarse_ops[i], dtype=float)
        self.coarse = cur.toarray()
        self._lu = sla.lu_factor(self.coarse)

    @property
    def depth(self) -> int:
        """Number of smoothed levels above the exactly solved one."""
        return len(self.levels)

    def transpose(self) -> "MgHierarchy":
        """Hierarchy of A' (its Galerkin levels are the transposed levels)."""
        new = object.__new__(MgHierarchy)
        new.level = self.level
        new.cycles, new.pre, new.post, new.check = self.cycles, self.pre, self.post, self.check
        new.levels = [_Level(lv.A.T.tocsr(), lv.P) for lv in self.levels]
        new.coarse = self.coarse.T.copy()
        new._lu = sla.lu_factor(new.coarse)
        return new

    def _cycle(self, k, x, b):
        if k == len(self.levels):
            x[:] = sla.lu_solve(self._lu, b)
            return x
        lv = self.levels[k]
        _gs_forward(lv.A.indptr, lv.A.indices, lv.A.data, lv.diag, b, x, self.pre)
        r = b - lv.A @ x
        rc = lv.P.T @ r
        ec = self._cycle(k + 1, np.zeros(rc.shape[0]), rc)
        x += lv.P @ ec
        _gs_backward(lv.A.indptr, lv.A.indices, lv.A.data, lv.diag, b, x, self.post)
        return x

    def solve(self, b, cycles: int | None = None):
        """Approximate A^{-1} b by V-cycles from a zero initial guess."""
        b = np.ascontiguousarray(b, dtype=float)
        x = np.zeros_like(b)
        ncyc = self.cycles if cycles is None else cycles
        if not self.levels:
            return sla.lu_solve(self._lu, b)
        for _ in range(ncyc):
            self._cycle(0, x, b)
        if self.check:
            A = self.levels[0].A
            rn = np.linalg.norm(b - A @ x)
            bn = np.linalg.norm(b)
            if not np.isfinite(rn) or rn > bn * (1 + 1e-12) and bn > 0:
                raise MultigridDivergence(f"V-cycles increased the residual ({rn:.2e} > {bn:.2e})")
        return x

    __call__ = solve


def galerkin_chain(A, level: int) -> list:
    """Galerkin coarsenings of A for levels level-1, ..., 2."""
    out = []
    cur = sp.csr_matrix(A)
    for lev in range(level, COARSEST, -1):
        P = prolongation(lev)
        cur = (P.T @ cur @ P).tocsr()
        out.append(cur)
    return out


def rediscretized_levels(assemble, level: int, extra=None) -> list:
    """Coarse operators assemble(lev) plus the Galerkin chain of ``extra``.

    ``assemble`` maps a grid level to the PDE matrix on that grid; ``extra``
    is a fine-level matrix (typically diagonal) coarsened algebraically.
    """
    ops = [sp.csr_matrix(assemble(lev)) for lev in range(level - 1, COARSEST - 1, -1)]
    if extra is not None:
        ops = [a + e for a, e in zip(ops, galerkin_chain(extra, level))]
    return ops


def build_hierarchy(A, cycles: int = 3, pre: int = 5, post: int = 5, coarse_ops=None) -> MgHierarchy:
    return MgHierarchy(A, cycles, pre, post, coarse_ops=coarse_ops)


def v_cycle(hierarchy: MgHierarchy, rhs, cycles: int = 3):
    return hierarchy.solve(rhs, cycles)
