"""Block preconditioners for the reduced Newton system.

The Newton matrix is

    [ H + Ty      0           L'     ]
    [   0      a*Mt + Tz    -Nbar'   ]
    [   L       -Nbar         0      ]

with Mt = [[Mc, -Mc], [-Mc, Mc]] and Nbar = [N, -N].  The (1,1) block is
approximated by Chebyshev semi-iteration on H + Ty and by the exact inverse
of the 2x2 diagonal-block matrix obtained when Mc is replaced by its
diagonal.  The Schur complement

    S = L (H + Ty)^{-1} L' + N (a*Mc + Phi)^{-1} N',   Phi = Tw Tv / (Tw + Tv)

is approximated by matching, Shat = (L + Mhat)(H + Ty)^{-1}(L + Mhat)', where
Mhat is diagonal.  Factor solves with L + Mhat go through a ``FactorSolver``
(multigrid, or an exact LU factorization for verification).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import multigrid
from .krylov import Chebyshev

ROUNDOFF = 1e-14


class PreconditionerError(ValueError):
    pass


# ---------------------------------------------------------------------------
# 2x2 block inverse with diagonal blocks


def _diag(x):
    if sp.issparse(x):
        return np.asarray(x.diagonal(), dtype=float)
    return np.asarray(x, dtype=float)


def block_2x2_inverse_apply(A, B1, B2, C, rhs):
    """Solve [[A, B1], [B2, C]] x = rhs for diagonal blocks.

    Uses the Schur complement C - B2 A^{-1} B1 of the leading block.
    """
    shape = np.atleast_1d(_diag(A)).shape
    a, b1, b2, c = (np.broadcast_to(_diag(t), shape) for t in (A, B1, B2, C))
    rhs = np.asarray(rhs, dtype=float)
    n = a.shape[0]
    r1, r2 = rhs[:n], rhs[n:]
    s = c - b2 * b1 / a
    if np.any(a == 0) or np.any(s == 0):
        raise PreconditionerError("singular pivot block in 2x2 block inverse")
    t = r1 / a
    x2 = (r2 - b2 * t) / s
    x1 = t - b1 * x2 / a
    return np.concatenate([x1, x2])


class ControlBlockInverse:
    """Exact inverse of [[aD + Tw, -aD], [-aD, aD + Tv]] with D diagonal."""

    def __init__(self, alpha, d, tw, tv):
        ad = alpha * np.asarray(d, dtype=float)
        self.a = ad + tw
        self.b = -ad
        self.c = ad + tv

    def __call__(self, r):
        return block_2x2_inverse_apply(self.a, self.b, self.b, self.c, r)


# ---------------------------------------------------------------------------
# matching diagonal


def mhat_bracket(dN, dG, tw, tv):
    """Diagonal of N (G + Phi)^{-1} N with every matrix replaced by its diagonal.

    Written as dN^2 / (dG + Tw Tv / (Tw + Tv)), which equals
    (1/a) D - (1/a^2) (Tw^{-1} + Tv^{-1} + (1/a) D^{-1})^{-1} for dN = D and
    dG = a D but has no cancellation when Tw, Tv are tiny.
    """
    dN, dG, tw, tv = (np.asarray(t, dtype=float) for t in (dN, dG, tw, tv))
    if np.any(tw <= 0) or np.any(tv <= 0):
        raise PreconditionerError("Theta_w and Theta_v must be positive")
    if np.any(dG < 0):
        raise PreconditionerError("negative control Hessian diagonal")
    phi = tw * tv / (tw + tv)
    den = dG + phi
    out = dN * dN / den
    if np.any(~np.isfinite(out)) or np.any(out < -ROUNDOFF):
        raise PreconditionerError("matching bracket is not a nonnegative finite diagonal")
    return np.maximum(out, 0.0)


def build_M_hat(alpha, D_M, theta_w, theta_v, theta_y):
    """Diagonal matching term for the steady Schur complement.

    Mhat = [(1/a) D_M - (1/a^2)(Tw^{-1} + Tv^{-1} + (1/a) D_M^{-1})^{-1}]^{1/2} (D_M + Ty)^{1/2}.
    """
    D_M = _diag(D_M)
    br = mhat_bracket(D_M, alpha * D_M, theta_w, theta_v)
    return np.sqrt(br) * np.sqrt(D_M + np.asarray(theta_y, dtype=float))


def mhat_for(qp, theta):
    """Matching diagonal Mhat for a QpProblem and its Theta blocks."""
    dN = qp.N.diagonal()
    dG = qp.alpha * qp.Mc.diagonal()
    br = mhat_bracket(dN, dG, theta.w, theta.v)
    dH = qp.H.diagonal() + theta.y
    return np.sqrt(br) * np.sqrt(np.maximum(dH, 0.0)), br


# ---------------------------------------------------------------------------
# dense Schur complements (verification scale)


def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def schur_exact(L, M, theta_y, theta_w, theta_v, alpha):
    """S = L (M+Ty)^{-1} L' + (1/a) M - (1/a^2)(Tw^{-1} + Tv^{-1} + (1/a) M^{-1})^{-1}."""
    L, M = _dense(L), _dense(M)
    if L.shape[0] > 2000:
        raise ValueError("dense Schur complement limited to n <= 2000")
    My = M + np.diag(theta_y)
    try:
        t1 = L @ sla.solve(My, L.T, assume_a="sym")
    except sla.LinAlgError as exc:
        raise PreconditionerError("M + Theta_y is singular") from exc
    inner = np.diag(1.0 / theta_w + 1.0 / theta_v) + sla.inv(M) / alpha
    return t1 + M / alpha - sla.inv(inner) / alpha ** 2


def schur_brute_force(op):
    """B A^{-1} B' from the dense blocks of a SaddleOperator."""
    Ay, Az, B = (_dense(X) for X in op.blocks())
    A = sla.block_diag(Ay, Az)
    return B @ sla.solve(A, B.T)


def schur_hat_dense(L, H_theta, mhat):
    """(L + Mhat)(H + Ty)^{-1}(L + Mhat)' as a dense matrix."""
    F = _dense(L) + np.diag(mhat)
    return F @ sla.solve(_dense(H_theta), F.T)


# ---------------------------------------------------------------------------
# factor solvers for L + Mhat


class ExactFactor:
    """Sparse LU solves with F and F'."""

    def __init__(self, F):
        F = sp.csc_matrix(F)
        self.F = F
        self._lu = spla.splu(F)

    def solve(self, r):
        return self._lu.solve(np.asarray(r, dtype=float))

    def solve_T(self, r):
        return self._lu.solve(np.asarray(r, dtype=float), trans="T")


class MgFactor:
    """V-cycle approximations of F^{-1} and F^{-T}.

    The hierarchy for F' reuses the transposed levels of F, so ``solve_T``
    applies exactly the transpose of the linear map ``solve``.
    """

    def __init__(self, F, cycles=3, smooth=5, coarse_ops=None):
        self.mg = multigrid.MgHierarchy(F, cycles, smooth, smooth, coarse_ops=coarse_ops)
        self.mgT = self.mg.transpose()

    def solve(self, r):
        return self.mg.solve(r)

    def solve_T(self, r):
        return self.mgT.solve(r)


def factor_solver(qp, F, extra, inner="mg", cycles=3, smooth=5, transpose_pde=False):
    """Solver for F = (L or L') + extra on a steady grid."""
    if inner == "exact":
        return ExactFactor(F)
    coarse = None
    if qp.meta.get("assemble_L") is not None:
        base = qp.meta["assemble_L"]
        asm = (lambda lev: base(lev).T) if transpose_pde else base
        coarse = multigrid.rediscretized_levels(asm, qp.grid.level, extra)
    return MgFactor(F, cycles, smooth, coarse)


# ---------------------------------------------------------------------------
# Schur approximation


class SchurApprox:
    """Shat^{-1} r = (L+Mhat)^{-T} (H+Ty) (L+Mhat)^{-1} r."""

    def __init__(self, mhat, middle, factor):
        self.mhat = mhat
        self.middle = sp.csr_matrix(middle)
        self.factor = factor

    def __call__(self, r):
        x = self.factor.solve(r)
        return self.factor.solve_T(self.middle @ x)


def build_schur_approx(qp, theta, inner="mg", cycles=3, smooth=5, mhat=None):
    if mhat is None:
        mhat, _ = mhat_for(qp, theta)
    middle = (qp.H + sp.diags(theta.y)).tocsr()
    if qp.meta.get("time") is not None:
        from .time_dependent import BidiagonalFactor
        factor = BidiagonalFactor(qp, mhat, inner, cycles, smooth)
    else:
        D = sp.diags(mhat)
        factor = factor_solver(qp, (qp.L + D).tocsr(), D, inner, cycles, smooth)
    return SchurApprox(mhat, middle, factor)


def apply_S_hat_inverse(schur: SchurApprox, rhs):
    return schur(rhs)


# ---------------------------------------------------------------------------
# (1,1) block


class Block11Approx:
    """Chebyshev for H + Ty and the exact 2x2 diagonal-block inverse for z."""

    def __init__(self, qp, theta, cheb_steps=20, inner="cheb"):
        Ay = (qp.H + sp.diags(theta.y)).tocsr()
        if inner == "exact":
            self.y_solve = ExactFactor(Ay).solve
        else:
            self.y_solve = Chebyshev(Ay, cheb_steps)
        self.z_solve = ControlBlockInverse(qp.alpha, qp.Mc.diagonal(), theta.w, theta.v)
        self.n = qp.n

    def __call__(self, r):
        n = self.n
        return np.concatenate([self.y_solve(r[:n]), self.z_solve(r[n:3 * n])])


def apply_P_D(block11: Block11Approx, schur: SchurApprox, rhs):
    n = block11.n
    return np.concatenate([block11(rhs[:3 * n]), schur(rhs[3 * n:])])


def apply_P_T(block11: Block11Approx, schur: SchurApprox, coupling, rhs):
    """Forward substitution with [[Ahat, 0], [B, -Shat]], B = [L, -N, N].

    ``coupling`` maps the (y, z) part of a vector to B times it (or is None
    for a zero coupling block).
    """
    n = block11.n
    x1 = block11(rhs[:3 * n])
    t = -rhs[3 * n:]
    if coupling is not None:
        t = t + coupling(x1)
    return np.concatenate([x1, schur(t)])


class PD:
    def __init__(self, block11, schur):
        self.block11, self.schur = block11, schur

    def __call__(self, r):
        return apply_P_D(self.block11, self.schur, r)


class PT:
    def __init__(self, qp, block11, schur):
        self.qp, self.block11, self.schur = qp, block11, schur

    def coupling(self, x1):
        n = self.qp.n
        return self.qp.L @ x1[:n] - self.qp.Nbar(x1[n:3 * n])

    def __call__(self, r):
        return apply_P_T(self.block11, self.schur, self.coupling, r)


# ---------------------------------------------------------------------------
# permuted preconditioner for singular (1,1) blocks


class ControlHessianInverse:
    """Approximate (a*Mt + Tz)^{-1}.

    Chebyshev semi-iteration split by the exact inverse of the diagonalized
    block a*Dt + Tz; its preconditioned spectrum lies in the hull of
    lambda(D^{-1} M) and {1}.  Diagonal Mc gives the exact inverse.
    """

    def __init__(self, qp, theta, steps=20, interval=(0.25, 2.25)):
        self.qp = qp
        self.tz = theta.z
        self.prec = ControlBlockInverse(qp.alpha, qp.Mc.diagonal(), theta.w, theta.v)
        Mc = qp.Mc
        self.exact = Mc.nnz == np.count_nonzero(Mc.diagonal()) and _is_diag(Mc)
        self.steps = steps
        self.lo = min(interval[0], 1.0)
        self.hi = max(interval[1], 1.0)

    def matvec(self, x):
        return self.qp.alpha * self.qp.Mt(x) + self.tz * x

    def __call__(self, b):
        if self.exact:
            return self.prec(b)
        theta = 0.5 * (self.hi + self.lo)
        delta = 0.5 * (self.hi - self.lo)
        sigma1 = theta / delta
        rho = 1.0 / sigma1
        r = np.asarray(b, dtype=float).copy()
        d = self.prec(r) / theta
        x = d.copy()
        for _ in range(self.steps):
            r = r - self.matvec(d)
            rho_new = 1.0 / (2.0 * sigma1 - rho)
            d = rho_new * rho * d + (2.0 * rho_new / delta) * self.prec(r)
            rho = rho_new
            x += d
        return x


def _is_diag(A):
    A = A.tocoo()
    return bool(np.all(A.row == A.col))


class SchurPiApprox:
    """Shat_Pi^{-1} = (L + M_r)^{-1} L (L' + M_l)^{-1} with M_l = H + Ty."""

    def __init__(self, qp, theta, inner="mg", cycles=3, smooth=5):
        _, br = mhat_for(qp, theta)
        self.m_r = br
        self.L = qp.L
        Ml = (qp.H + sp.diags(theta.y)).tocsr()
        Dr = sp.diags(br)
        self.right = factor_solver(qp, (qp.L + Dr).tocsr(), Dr, inner, cycles, smooth)
        self.left = factor_solver(qp, (qp.L.T + Ml).tocsr(), Ml, inner, cycles, smooth,
                                  transpose_pde=True)

    def __call__(self, r):
        return self.right.solve(self.L @ self.left.solve(r))


def build_S_Pi_hat(qp, theta, inner="mg", cycles=3, smooth=5):
    return SchurPiApprox(qp, theta, inner, cycles, smooth)


class PPi:
    """v2 = K^{-1} w2;  v1 = L^{-1}(Nbar v2 + w3);  v3 = Shat_Pi^{-1}((H+Ty) v1 - w1)."""

    def __init__(self, qp, theta, inner="mg", cheb_steps=20, cycles=3, smooth=5):
        self.qp = qp
        self.n = qp.n
        self.Ml = (qp.H + sp.diags(theta.y)).tocsr()
        if inner == "exact":
            K = (qp.alpha * qp.Mt_matrix() + sp.diags(theta.z)).tocsc()
            self.k_solve = ExactFactor(K).solve
        else:
            self.k_solve = ControlHessianInverse(qp, theta, cheb_steps)
        self.l_solve = factor_solver(qp, qp.L, None, inner, cycles, smooth).solve
        self.schur = SchurPiApprox(qp, theta, inner, cycles, smooth)

    def __call__(self, w):
        n = self.n
        w1, w2, w3 = w[:n], w[n:3 * n], w[3 * n:]
        v2 = self.k_solve(w2)
        v1 = self.l_solve(self.qp.Nbar(v2) + w3)
        v3 = self.schur(self.Ml @ v1 - w1)
        return np.concatenate([v1, v2, v3])


def apply_P_Pi(ppi: PPi, rhs):
    return ppi(rhs)


# ---------------------------------------------------------------------------


def make_preconditioner(qp, op, params, inner="mg"):
    """Preconditioner selected by ``params.solver`` for the operator ``op``."""
    theta = op.theta
    solver = params.solver
    partial = bool(qp.meta.get("partial"))
    if partial and solver != "gmres-ppi":
        raise PreconditionerError("partial observation needs the permuted preconditioner (gmres-ppi)")
    if solver == "gmres-ppi":
        if qp.meta.get("time") is not None:
            raise PreconditionerError("the permuted preconditioner is not available for the heat problem")
        return PPi(qp, theta, inner, params.cheb_steps, params.mg_cycles, params.mg_smooth)
    cheb_inner = "exact" if inner == "exact" else "cheb"
    block11 = Block11Approx(qp, theta, params.cheb_steps, cheb_inner)
    schur = build_schur_approx(qp, theta, inner, params.mg_cycles, params.mg_smooth)
    if solver == "minres-pd":
        return PD(block11, schur)
    if solver == "gmres-pt":
        return PT(qp, block11, schur)
    raise PreconditionerError(f"no preconditioner for solver {solver!r}")
