"""Preconditioned MINRES and GMRES, plus Chebyshev semi-iteration.

Both Krylov solvers stop on the relative unpreconditioned residual
||b - A x|| / ||b||, and report that quantity recomputed at exit.
Operators and preconditioners are plain callables ``v -> A v`` (or
``v -> P^{-1} v``); sparse matrices and dense arrays are accepted too.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class KrylovBreakdown(ArithmeticError):
    pass


class ChebyshevIntervalError(ArithmeticError):
    pass


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    history: list | None = None


def as_operator(A):
    """Wrap a matrix or callable as a matvec callable."""
    if A is None:
        return lambda v: v
    if callable(A) and not sp.issparse(A) and not isinstance(A, np.ndarray):
        return A
    return lambda v: A @ v


def _true_residual(A, b, x, bnorm):
    return float(np.linalg.norm(b - A(x)) / bnorm)


def minres(A, b, P=None, tol: float = 1e-10, maxit: int = 200, x0=None,
           check_every: int = 1):
    """Preconditioned MINRES for symmetric A and SPD preconditioner P^{-1}.

    ``P`` applies the inverse of the preconditioner.  The true residual is
    recomputed every ``check_every`` iterations and drives the stopping test.
    """
    A = as_operator(A)
    Pinv = as_operator(P)
    b = np.asarray(b, dtype=float)
    n = b.size
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0:
        return np.zeros(n), SolveReport(0, 0.0, True, [0.0])
    r = b - A(x) if x0 is not None else b.copy()
    res = np.linalg.norm(r) / bnorm
    hist = [res]
    if res <= tol:
        return x, SolveReport(0, res, True, hist)

    # Lanczos vectors in the P-inner product (Elman/Silvester/Wathen form)
    v_old = np.zeros(n)
    v = r
    z = Pinv(v)
    gamma = float(v @ z)
    if not gamma > 0:
        raise KrylovBreakdown("preconditioner is not positive definite")
    gamma = np.sqrt(gamma)
    gamma_old = 1.0
    eta = gamma
    s_old = s = 0.0
    c_old = c = 1.0
    w_old = np.zeros(n)
    w = np.zeros(n)
    it = 0
    converged = False
    while it < maxit:
        it += 1
        z = z / gamma
        Az = A(z)
        delta = float(Az @ z)
        v_new = Az - (delta / gamma) * v - (gamma / gamma_old) * v_old
        z_new = Pinv(v_new)
        g2 = float(v_new @ z_new)
        if g2 < 0 and abs(g2) > 1e-14 * (delta ** 2 + gamma ** 2):
            raise KrylovBreakdown("preconditioner lost positive definiteness")
        gamma_new = np.sqrt(max(g2, 0.0))
        a0 = c * delta - c_old * s * gamma
        a1 = np.hypot(a0, gamma_new)
        a2 = s * delta + c_old * c * gamma
        a3 = s_old * gamma
        if a1 == 0:
            raise KrylovBreakdown("MINRES rotation breakdown")
        c_new = a0 / a1
        s_new = gamma_new / a1
        w_new = (z - a3 * w_old - a2 * w) / a1
        x = x + c_new * eta * w_new
        eta = -s_new * eta
        # shift
        v_old, v = v, v_new
        w_old, w = w, w_new
        gamma_old, gamma = gamma, gamma_new
        s_old, s = s, s_new
        c_old, c = c, c_new
        z = z_new
        if it % check_every == 0 or it == maxit:
            res = _true_residual(A, b, x, bnorm)
            hist.append(res)
            if res <= tol:
                converged = True
                break
        if gamma == 0:
            res = _true_residual(A, b, x, bnorm)
            converged = res <= tol
            break
    res = _true_residual(A, b, x, bnorm)
    return x, SolveReport(it, res, converged or res <= tol, hist)


def gmres(A, b, P=None, tol: float = 1e-10, maxit: int = 200, x0=None):
    """Full (non-restarted) GMRES with right preconditioning.

    With right preconditioning the Arnoldi least-squares residual is the
    unpreconditioned one, so the stopping rule sees ||b - A x|| directly.
    The residual is recomputed explicitly before returning.
    """
    A = as_operator(A)
    Pinv = as_operator(P)
    b = np.asarray(b, dtype=float)
    n = b.size
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0:
        return np.zeros(n), SolveReport(0, 0.0, True, [0.0])
    r = b - A(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    hist = [beta / bnorm]
    if beta / bnorm <= tol:
        return x, SolveReport(0, beta / bnorm, True, hist)

    m = min(maxit, n)
    V = np.zeros((m + 1, n))
    Z = np.zeros((m, n))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = r / beta
    k = 0
    for j in range(m):
        Z[j] = Pinv(V[j])
        w = A(Z[j])
        # modified Gram-Schmidt, applied twice for robustness
        for _ in range(2):
            for i in range(j + 1):
                hij = float(w @ V[i])
                H[i, j] += hij
                w = w - hij * V[i]
        hnext = np.linalg.norm(w)
        H[j + 1, j] = hnext
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        den = np.hypot(H[j, j], H[j + 1, j])
        if den == 0:
            raise KrylovBreakdown("GMRES Hessenberg breakdown")
        cs[j] = H[j, j] / den
        sn[j] = H[j + 1, j] / den
        H[j, j] = den
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        k = j + 1
        est = abs(g[j + 1]) / bnorm
        hist.append(est)
        if est <= tol or hnext <= 1e-300:
            break
        V[j + 1] = w / hnext
    y = _backsolve(H[:k, :k], g[:k])
    x = x + Z[:k].T @ y
    res = _true_residual(A, b, x, bnorm)
    hist[-1] = res
    converged = res <= tol
    if not converged and k >= maxit:
        log.debug("GMRES reached maxit=%d at residual %.2e", maxit, res)
    return x, SolveReport(k, res, converged, hist)


def _backsolve(R, g):
    k = len(g)
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y


# ---------------------------------------------------------------------------
# Chebyshev semi-iteration with Jacobi splitting

Q1_MASS_INTERVAL = (0.25, 2.25)


class Chebyshev:
    """Fixed-step Chebyshev semi-iteration for A = M + diag(theta).

    ``interval`` bounds the spectrum of diag(A)^{-1} A.  The default is the
    2D Q1 mass interval [1/4, 9/4]; adding a nonnegative diagonal only pulls
    eigenvalues toward 1, which this interval already contains.  Diagonal
    matrices are inverted exactly.  Zero initial guess and a fixed step
    count make this a fixed linear map.
    """

    def __init__(self, A, steps: int = 20, interval=Q1_MASS_INTERVAL, check: bool = True):
        A = sp.csr_matrix(A)
        self.A = A
        self.steps = int(steps)
        self.diag = A.diagonal()
        if np.any(self.diag <= 0):
            raise ValueError("Chebyshev semi-iteration needs a positive diagonal")
        self.exact = A.nnz == np.count_nonzero(self.diag) and _is_diagonal(A)
        lo, hi = interval
        self.lo = min(lo, 1.0)
        self.hi = max(hi, 1.0)
        self.check = check

    def __call__(self, b):
        b = np.asarray(b, dtype=float)
        dinv = 1.0 / self.diag
        if self.exact or self.hi == self.lo:
            return dinv * b
        theta = 0.5 * (self.hi + self.lo)
        delta = 0.5 * (self.hi - self.lo)
        sigma1 = theta / delta
        rho = 1.0 / sigma1
        # one step = one product with A; the Jacobi start costs none
        r = b.copy()
        d = dinv * r / theta
        x = d.copy()
        for _ in range(self.steps):
            r = r - self.A @ d
            rho_new = 1.0 / (2.0 * sigma1 - rho)
            d = rho_new * rho * d + (2.0 * rho_new / delta) * (dinv * r)
            rho = rho_new
            x += d
        if self.check:
            r = r - self.A @ d
        if self.check and np.linalg.norm(r) > np.linalg.norm(b) * (1 + 1e-12):
            raise ChebyshevIntervalError("residual grew: spectrum outside the assumed interval")
        return x


def _is_diagonal(A) -> bool:
    A = A.tocoo()
    return bool(np.all(A.row == A.col))


def chebyshev_semi_iteration(A, b, steps: int = 20, interval=Q1_MASS_INTERVAL):
    return Chebyshev(A, steps, interval)(b)
