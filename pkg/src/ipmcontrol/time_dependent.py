"""Backward-Euler space-time control of the heat equation.

Unknowns are stacked time block by time block, y = [y_1; ...; y_Nt], with
y_0 = 0.  The discrete constraint is

    Lcal y - tau * Mbar_cal z = f_cal,   Lcal = bidiag(-M, M + tau K),

and the objective weights state and control by tau * Mc_cal, where Mc_cal
is blkdiag(M, ..., M) (rectangle rule) or blkdiag(M/2, M, ..., M, M/2)
(trapezoidal rule).  In the generic QP blocks this is H = Mc = tau Mc_cal and
N = tau Mcal, so the steady IPM and preconditioners apply unchanged; only the
Schur factor solves need the block-bidiagonal structure below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import fem, multigrid
from .fem import Grid
from .qp import QpProblem, _check_signs, split_bounds, BOUND_INFLATION

RULES = ("rectangle", "trapezoid")


@dataclass
class SpaceTimeSystem:
    grid: Grid
    tau: float
    nt: int
    M: sp.csr_matrix
    K: sp.csr_matrix
    Lcal: sp.csr_matrix
    Mcal: sp.csr_matrix
    Mc_cal: sp.csr_matrix
    weights: np.ndarray
    rule: str = "rectangle"

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def blocks(self, v):
        return np.asarray(v).reshape(self.nt, self.n)


def time_steps(tau: float, T: float = 1.0) -> int:
    if not tau > 0:
        raise ValueError("time step must be positive")
    nt = int(round(T / tau))
    if nt < 1 or abs(nt * tau - T) > 1e-12 * max(1.0, T):
        raise ValueError(f"time step {tau} does not divide the horizon {T}")
    return nt


def quadrature_weights(nt: int, rule: str = "rectangle") -> np.ndarray:
    if rule not in RULES:
        raise ValueError(f"unknown time quadrature {rule!r}")
    w = np.ones(nt)
    if rule == "trapezoid" and nt > 1:
        w[0] = w[-1] = 0.5
    return w


def assemble_spacetime(grid: Grid, tau: float, T: float = 1.0, rule: str = "rectangle",
                       mass: str = "consistent") -> SpaceTimeSystem:
    nt = time_steps(tau, T)
    M = fem.assemble_mass(grid, mass)
    K = fem.assemble_stiffness_poisson(grid)
    eye = sp.identity(nt, format="csr")
    sub = sp.diags([np.ones(nt - 1)], [-1], shape=(nt, nt), format="csr")
    Lcal = (sp.kron(eye, M + tau * K) - sp.kron(sub, M)).tocsr()
    Mcal = sp.kron(eye, M, format="csr")
    w = quadrature_weights(nt, rule)
    Mc_cal = sp.kron(sp.diags(w), M, format="csr")
    return SpaceTimeSystem(grid, tau, nt, M, K, Lcal, Mcal, Mc_cal, w, rule)


def heat_recurrence(system: SpaceTimeSystem, u, f=None):
    """Time-march M y_k - M y_{k-1} + tau K y_k = tau M (u_k + f), y_0 = 0."""
    M, K, tau = system.M, system.K, system.tau
    from scipy.sparse.linalg import splu
    lu = splu((M + tau * K).tocsc())
    U = system.blocks(u)
    F = np.zeros(system.n) if f is None else np.asarray(f, dtype=float)
    Y = np.zeros_like(U)
    prev = np.zeros(system.n)
    for k in range(system.nt):
        prev = lu.solve(M @ prev + tau * (M @ (U[k] + F)))
        Y[k] = prev
    return Y.ravel()


def build_heat_qp(problem, grid: Grid | None = None) -> QpProblem:
    """Space-time QP for the heat problem (control constraints only)."""
    if problem.has_state_bounds:
        raise ValueError("the heat problem supports control constraints only")
    if problem.obs_box is not None:
        raise ValueError("partial observation is not available for the heat problem")
    grid = grid or Grid(problem.ell)
    st = assemble_spacetime(grid, problem.tau, problem.T, problem.time_rule, problem.mass)
    nt, tau = st.nt, st.tau
    lumped = fem.assemble_mass(grid, "lumped").diagonal()
    ua = fem.interpolate(grid, problem.ua)
    ub = fem.interpolate(grid, problem.ub)
    _check_signs(ua, ub, "control")
    za, zb = split_bounds(np.tile(ua, nt), np.tile(ub, nt))
    zb = np.maximum(zb, za + BOUND_INFLATION)
    f = fem.interpolate(grid, problem.f)
    Hc = (tau * st.Mc_cal).tocsr()
    meta = {"pde": "heat", "symmetric_L": False, "partial": False, "mass": problem.mass,
            "time": st}
    return QpProblem(
        L=st.Lcal, H=Hc, Mc=Hc, N=(tau * st.Mcal).tocsr(),
        d=tau * np.kron(st.weights, lumped),
        yd=np.tile(fem.interpolate(grid, problem.yd), nt),
        f=tau * np.tile(st.M @ f, nt),
        za=za, zb=zb, alpha=problem.alpha, beta=problem.beta, grid=grid, meta=meta,
    )


# ---------------------------------------------------------------------------
# Schur complement


def time_schur_exact(system: SpaceTimeSystem, theta_y, theta_w, theta_v, alpha):
    """Dense S = Lcal (tau Mc + Ty)^{-1} Lcal' + (tau/a) Mcal Mc^{-1} Mcal
    - (1/a^2) Mcal Mc^{-1} (Tw^{-1} + Tv^{-1} + (1/(a tau)) Mc^{-1})^{-1} Mc^{-1} Mcal."""
    tau = system.tau
    L = system.Lcal.toarray()
    Mm = system.Mcal.toarray()
    Mc = system.Mc_cal.toarray()
    if L.shape[0] > 2000:
        raise ValueError("dense Schur complement limited to n <= 2000")
    t1 = L @ sla.solve(tau * Mc + np.diag(theta_y), L.T)
    Mci = sla.inv(Mc)
    inner = np.diag(1.0 / theta_w + 1.0 / theta_v) + Mci / (alpha * tau)
    return (t1 + (tau / alpha) * Mm @ Mci @ Mm
            - Mm @ Mci @ sla.inv(inner) @ Mci @ Mm / alpha ** 2)


def time_mhat(system: SpaceTimeSystem, theta_w, theta_v, theta_y, alpha):
    """Diagonal matching term for the space-time Schur complement.

    [ (tau/a) D^2 Dc^{-1} - (1/a^2) D^2 Dc^{-2} (Tw^{-1} + Tv^{-1} + (1/(a tau)) Dc^{-1})^{-1} ]^{1/2}
    (tau Dc + Ty)^{1/2},  with D = diag(Mcal), Dc = diag(Mc_cal).
    """
    from .preconditioners import mhat_bracket
    tau = system.tau
    D = system.Mcal.diagonal()
    Dc = system.Mc_cal.diagonal()
    br = mhat_bracket(tau * D, alpha * tau * Dc, theta_w, theta_v)
    return np.sqrt(br) * np.sqrt(tau * Dc + np.asarray(theta_y, dtype=float))


class _ExactBlock:
    def __init__(self, B):
        from scipy.sparse.linalg import splu
        self._lu = splu(sp.csc_matrix(B))

    def solve(self, r):
        return self._lu.solve(r)

    def solve_T(self, r):
        return self._lu.solve(r, trans="T")


class _MgBlock:
    def __init__(self, B, cycles, smooth):
        self.mg = multigrid.MgHierarchy(B, cycles, smooth, smooth)
        self.mgT = self.mg.transpose()

    def solve(self, r):
        return self.mg.solve(r)

    def solve_T(self, r):
        return self.mgT.solve(r)


class BidiagonalFactor:
    """Solves with F = Lcal + diag(mhat) by block forward/backward substitution.

    Diagonal blocks M + tau K + diag(mhat_k) are inverted by multigrid (or
    LU in verification mode); the subdiagonal blocks are -M.
    """

    def __init__(self, qp, mhat, inner="mg", cycles=3, smooth=5):
        st: SpaceTimeSystem = qp.meta["time"]
        self.st = st
        base = (st.M + st.tau * st.K).tocsr()
        mh = st.blocks(mhat)
        self.blocks = []
        for k in range(st.nt):
            B = (base + sp.diags(mh[k])).tocsr()
            self.blocks.append(_ExactBlock(B) if inner == "exact" else _MgBlock(B, cycles, smooth))

    def solve(self, r):
        st = self.st
        R = st.blocks(r)
        X = np.zeros_like(R)
        prev = np.zeros(st.n)
        for k in range(st.nt):
            prev = self.blocks[k].solve(R[k] + st.M @ prev)
            X[k] = prev
        return X.ravel()

    def solve_T(self, r):
        st = self.st
        R = st.blocks(r)
        X = np.zeros_like(R)
        nxt = np.zeros(st.n)
        for k in range(st.nt - 1, -1, -1):
            nxt = self.blocks[k].solve_T(R[k] + st.M @ nxt)
            X[k] = nxt
        return X.ravel()


def build_time_schur_approx(qp, theta, inner="mg", cycles=3, smooth=5):
    from .preconditioners import build_schur_approx
    st = qp.meta["time"]
    mhat = time_mhat(st, theta.w, theta.v, theta.y, qp.alpha)
    return build_schur_approx(qp, theta, inner, cycles, smooth, mhat=mhat)


def solve_heat_control(problem, params=None, callback=None):
    from .ipm import IpmParams, ipm_solve
    params = params or IpmParams(solver="gmres-pt")
    if params.solver not in ("gmres-pt", "minres-pd", "direct"):
        raise ValueError(f"solver {params.solver!r} is not available for the heat problem")
    qp = build_heat_qp(problem)
    return (qp, *ipm_solve(qp, params, callback))
