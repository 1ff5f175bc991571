"""Dense eigenvalue checks of the preconditioner theory at small mesh sizes.

All checks use exact inner solves (dense factorizations) so that they test
the approximations themselves rather than Chebyshev or multigrid accuracy.
Symmetric pencils are solved twice, through a Cholesky similarity transform
and through a plain dense eigensolver, and the two must agree.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import fem
from .fem import Grid
from .ipm import SaddleOperator, ThetaBlocks
from .preconditioners import mhat_for, schur_brute_force
from .qp import ControlProblem, build_qp
from .sparse_core import generalized_eig

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0
IDEAL_P1 = np.array([1.0 - GOLDEN, 1.0, GOLDEN])


@dataclass
class Report:
    name: str
    passed: bool
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        vals = ", ".join(f"{k}={_short(v)}" for k, v in self.values.items())
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {vals}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.3e}"
    return str(v)


def _dense(A):
    return A.toarray() if hasattr(A, "toarray") else np.asarray(A, dtype=float)


def pencil_eigs(A, B, route_tol: float = 1e-8):
    """Eigenvalues of B^{-1} A for symmetric A and SPD B by two routes.

    B is first scaled symmetrically by its diagonal.  Returns (eigs, gap),
    where gap is the largest route disagreement relative to max |eig|.
    """
    A, B = _dense(A), _dense(B)
    s = 1.0 / np.sqrt(np.diag(B))
    As = A * s[:, None] * s[None, :]
    Bs = B * s[:, None] * s[None, :]
    ev1 = generalized_eig(As, Bs, symmetric=True)
    ev2 = np.sort(sla.eigvals(sla.solve(Bs, As)).real)
    gap = float(np.max(np.abs(ev1 - ev2)) / max(np.abs(ev1).max(), 1.0))
    return ev1, gap


def random_theta(rng, n, lo=-6.0, hi=2.0, with_y=False):
    """Log-uniform positive Theta blocks (Theta_y zero unless requested)."""
    tw = 10.0 ** rng.uniform(lo, hi, n)
    tv = 10.0 ** rng.uniform(lo, hi, n)
    ty = 10.0 ** rng.uniform(lo, hi, n) if with_y else np.zeros(n)
    return ThetaBlocks(ty, tw, tv)


# ---------------------------------------------------------------------------
# ideal preconditioners


def saddle_blocks(qp, theta):
    op = SaddleOperator(qp, theta)
    Ay, Az, B = (_dense(X) for X in op.blocks())
    A = sla.block_diag(Ay, Az)
    return op, A, B


def verify_ideal_preconditioners(ell: int = 3, alpha: float = 1e-2, seed: int = 0,
                                 tol: float = 1e-8) -> Report:
    """P1 = blkdiag(A, S) and P2 = [[A, 0], [B, -S]] for a Newton matrix.

    P2^{-1} K = [[I, A^{-1}B'], [0, I]] is defective, so instead of dense
    eigenvalues (accurate only to about sqrt(eps)) its block-triangular
    structure is certified: the (2,1) block vanishes and both diagonal
    blocks have eigenvalues 1.
    """
    rng = np.random.default_rng(seed)
    qp = build_qp(ControlProblem(ell=ell, alpha=alpha, beta=1e-2))
    theta = random_theta(rng, qp.n, with_y=True)
    op, A, B = saddle_blocks(qp, theta)
    K = op.to_sparse().toarray()
    S = B @ sla.solve(A, B.T)
    m = A.shape[0]
    P1 = sla.block_diag(A, S)
    ev1, gap = pencil_eigs(K, P1)
    dist1 = float(np.max(np.min(np.abs(ev1[:, None] - IDEAL_P1[None, :]), axis=1)))

    P2 = np.block([[A, np.zeros((m, S.shape[0]))], [B, -S]])
    X = sla.solve(P2, K)
    x21 = float(np.abs(X[m:, :m]).max())
    d11 = float(np.abs(np.linalg.eigvals(X[:m, :m]) - 1.0).max())
    d22 = float(np.abs(np.linalg.eigvals(X[m:, m:]) - 1.0).max())
    N = X - np.eye(K.shape[0])
    nil = float(np.abs(N @ N).max() / max(np.abs(N).max(), 1.0))
    raw = float(np.abs(np.linalg.eigvals(X) - 1.0).max())
    passed = dist1 <= tol and max(x21, d11, d22) <= tol and gap <= 1e-8
    return Report("ideal preconditioners", passed, {
        "P1_max_dist": dist1, "P1_route_gap": gap, "P2_block21": x21,
        "P2_diag_dev": max(d11, d22), "P2_nilpotency": nil, "P2_dense_eig_dev": raw,
    })


# ---------------------------------------------------------------------------
# diagonalized control block


def control_block_eigs(M, alpha, tw, tv):
    M = _dense(M)
    D = np.diag(np.diag(M))
    n = M.shape[0]

    def blk(X):
        return np.block([[alpha * X + np.diag(tw), -alpha * X], [-alpha * X, alpha * X + np.diag(tv)]])

    return pencil_eigs(blk(M), blk(D))


def mass_interval(M):
    M = _dense(M)
    ev = generalized_eig(M, np.diag(np.diag(M)), symmetric=True)
    return min(ev[0], 1.0), max(ev[-1], 1.0)


def verify_control_block_interval(alphas=(1e-6, 1e-2, 1.0), samples: int = 20, ell: int = 4,
                     mass: str = "consistent", seed: int = 0, slack: float = 1e-10) -> Report:
    rng = np.random.default_rng(seed)
    M = fem.assemble_mass(Grid(ell), mass)
    lo, hi = mass_interval(M)
    worst = 0.0
    gap = 0.0
    emin, emax = np.inf, -np.inf
    for alpha in alphas:
        for _ in range(samples):
            th = random_theta(rng, M.shape[0])
            ev, g = control_block_eigs(M, alpha, th.w, th.v)
            gap = max(gap, g)
            emin, emax = min(emin, ev[0]), max(emax, ev[-1])
            worst = max(worst, lo - ev[0], ev[-1] - hi)
    passed = worst <= slack and gap <= 1e-8
    return Report("control block interval", passed, {
        "interval": f"[{lo:.6f}, {hi:.6f}]", "eig_min": float(emin), "eig_max": float(emax),
        "max_violation": float(worst), "route_gap": gap,
    })


# ---------------------------------------------------------------------------
# Schur complement approximation


def schur_pair(qp, theta):
    """Dense (S, Shat) with exact inner solves."""
    op = SaddleOperator(qp, theta)
    S = schur_brute_force(op)
    mhat, _ = mhat_for(qp, theta)
    F = _dense(qp.L) + np.diag(mhat)
    Hy = _dense(qp.H) + np.diag(theta.y)
    Shat = F @ sla.solve(Hy, F.T)
    return 0.5 * (S + S.T), 0.5 * (Shat + Shat.T)


def schur_eigs(qp, theta):
    S, Shat = schur_pair(qp, theta)
    return pencil_eigs(S, Shat)


def verify_schur_bound(alphas=(1e-6, 1e-4, 1e-2, 1.0), samples: int = 20, ells=(3, 4),
                       mass: str = "lumped", pdes=("poisson",), seed: int = 0,
                       bound: float = 0.5, slack: float = 1e-10) -> Report:
    rng = np.random.default_rng(seed)
    emin = np.inf
    gap = 0.0
    count = 0
    for pde in pdes:
        for ell in ells:
            base = build_qp(ControlProblem(pde=pde, ell=ell, alpha=1.0, beta=1e-2, mass=mass))
            for alpha in alphas:
                base.alpha = alpha
                for _ in range(samples):
                    th = random_theta(rng, base.n, with_y=bool(rng.integers(2)))
                    ev, g = schur_eigs(base, th)
                    emin = min(emin, ev[0])
                    gap = max(gap, g)
                    count += 1
    passed = emin >= bound - slack and gap <= 1e-8
    return Report("Schur lower bound", passed, {
        "instances": count, "min_eig": float(emin), "route_gap": gap,
    })


def clustering_limit(ell: int = 4, pde: str = "poisson", alpha: float = 1e-2, tiny: float = 1e-12):
    """Spectrum of Shat^{-1} S with Theta_y = 0 and Theta_w, Theta_v -> 0 (lumped mass)."""
    qp = build_qp(ControlProblem(pde=pde, ell=ell, alpha=alpha, beta=1e-2, mass="lumped"))
    n = qp.n
    th = ThetaBlocks(np.zeros(n), np.full(n, tiny), np.full(n, tiny))
    return schur_eigs(qp, th)[0]


# ---------------------------------------------------------------------------
# eigenvalue distribution along an IPM run


def final_iteration_theta(problem: ControlProblem, params=None):
    """Theta blocks of the last Newton system of an IPM run."""
    from .ipm import IpmParams, ipm_solve
    qp = build_qp(problem)
    params = params or IpmParams(solver="direct")
    thetas = []
    ipm_solve(qp, params, callback=lambda st, op, rec: thetas.append(op.theta))
    return qp, thetas


def eigenvalue_scatter(qp, theta, tag: str = "", path=None):
    """Sorted eigenvalues of Shat^{-1} S; optionally written as CSV rows."""
    ev, _ = schur_eigs(qp, theta)
    if path is not None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["index", "eigenvalue", "tag"])
            for i, v in enumerate(ev):
                wr.writerow([i, repr(float(v)), tag])
    return ev


def cluster_fraction(ev, lo: float = 0.45, hi: float = 1.05) -> float:
    ev = np.asarray(ev)
    return float(np.mean((ev >= lo) & (ev <= hi)))
