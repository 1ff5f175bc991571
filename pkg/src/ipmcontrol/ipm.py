"""Infeasible primal-dual path-following interior point method.

Each iteration reduces the barrier, solves the reduced Newton system for
(dy, dz, dp), recovers the multiplier steps in closed form, and takes
separate primal and dual fraction-to-boundary steps.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .qp import QpProblem, recover_control

log = logging.getLogger(__name__)

SOLVERS = ("gmres-pt", "minres-pd", "gmres-ppi", "direct")


class IpmError(RuntimeError):
    pass


class InteriorityError(IpmError):
    pass


class IpmNotConverged(IpmError):
    def __init__(self, msg, solution=None, stats=None):
        super().__init__(msg)
        self.solution = solution
        self.stats = stats


@dataclass
class IpmParams:
    alpha0: float = 0.995
    sigma: float = 0.2
    eps_p: float = 1e-6
    eps_d: float = 1e-6
    eps_c: float = 1e-6
    mu0: float = 1.0
    max_iterations: int = 100
    lintol: float = 1e-10
    linmaxit: int = 200
    solver: str = "gmres-pt"
    cheb_steps: int = 20
    mg_cycles: int = 3
    mg_smooth: int = 5
    raise_on_failure: bool = True

    def __post_init__(self):
        if not 0 < self.alpha0 < 1:
            raise ValueError("alpha0 must lie in (0, 1)")
        if not 0 < self.sigma < 1:
            raise ValueError("sigma must lie in (0, 1)")
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; expected one of {SOLVERS}")


@dataclass
class IpmState:
    y: np.ndarray
    z: np.ndarray
    p: np.ndarray
    lza: np.ndarray
    lzb: np.ndarray
    lya: np.ndarray | None = None
    lyb: np.ndarray | None = None
    mu: float = 1.0
    k: int = 0

    def copy(self) -> "IpmState":
        cp = lambda a: None if a is None else a.copy()
        return IpmState(self.y.copy(), self.z.copy(), self.p.copy(), self.lza.copy(),
                        self.lzb.copy(), cp(self.lya), cp(self.lyb), self.mu, self.k)


@dataclass
class ThetaBlocks:
    y: np.ndarray
    w: np.ndarray
    v: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.w, self.v])


@dataclass
class Direction:
    dy: np.ndarray
    dz: np.ndarray
    dp: np.ndarray
    dlza: np.ndarray
    dlzb: np.ndarray
    dlya: np.ndarray | None = None
    dlyb: np.ndarray | None = None


@dataclass
class Solution:
    y: np.ndarray
    z: np.ndarray
    p: np.ndarray
    u: np.ndarray
    state: IpmState
    theta: ThetaBlocks | None = None


@dataclass
class IterationRecord:
    k: int
    mu: float
    xi_p: float
    xi_d: float
    xi_c: float
    lin_iters: int
    lin_residual: float
    alpha_p: float
    alpha_d: float
    cpu: float


@dataclass
class Stats:
    records: list = field(default_factory=list)
    converged: bool = False
    linear_failures: int = 0

    @property
    def nli(self) -> int:
        return len(self.records)

    @property
    def lin_iters(self) -> list:
        return [r.lin_iters for r in self.records]

    @property
    def av_li(self) -> float:
        its = self.lin_iters
        return float(np.mean(its)) if its else 0.0

    @property
    def av_cpu(self) -> float:
        return float(np.mean([r.cpu for r in self.records])) if self.records else 0.0

    @property
    def final_mu(self) -> float:
        return self.records[-1].mu if self.records else float("nan")

    CSV_FIELDS = ("k", "mu", "xi_p", "xi_d", "xi_c", "lin_iters", "lin_residual",
                  "alpha_p", "alpha_d")

    def rows(self):
        for r in self.records:
            yield {k: getattr(r, k) for k in self.CSV_FIELDS}

    def write_csv(self, path, extra: dict | None = None) -> None:
        extra = extra or {}
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(extra) + list(self.CSV_FIELDS))
            wr.writeheader()
            for row in self.rows():
                wr.writerow({**extra, **{k: _fmt(v) for k, v in row.items()}})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# residuals and Newton system


def _check_interior(qp: QpProblem, st: IpmState) -> None:
    if not (np.all(st.z > qp.za) and np.all(st.z < qp.zb)):
        raise InteriorityError("control iterate left the open box")
    if not (np.all(st.lza > 0) and np.all(st.lzb > 0)):
        raise InteriorityError("non-positive control multiplier")
    if qp.has_state_bounds:
        if not (np.all(st.y > qp.ya) and np.all(st.y < qp.yb)):
            raise InteriorityError("state iterate left the open box")
        if not (np.all(st.lya > 0) and np.all(st.lyb > 0)):
            raise InteriorityError("non-positive state multiplier")


def residuals(qp: QpProblem, st: IpmState, mu: float | None = None):
    """Primal and dual infeasibilities and the complementarity gap."""
    _check_interior(qp, st)
    mu = st.mu if mu is None else mu
    xi_p = qp.constraint_residual(st.y, st.z)
    d1 = qp.H @ (st.y - qp.yd) + qp.L.T @ st.p
    d2 = qp.alpha * qp.Mt(st.z) + qp.beta * qp.c - qp.NbarT(st.p) - st.lza + st.lzb
    parts = []
    if qp.has_state_bounds:
        d1 = d1 - st.lya + st.lyb
        parts += [(st.y - qp.ya) * st.lya - mu, (qp.yb - st.y) * st.lyb - mu]
    parts += [(st.z - qp.za) * st.lza - mu, (qp.zb - st.z) * st.lzb - mu]
    return xi_p, np.concatenate([d1, d2]), np.concatenate(parts)


def complementarity(qp: QpProblem, st: IpmState) -> np.ndarray:
    """Complementarity products, i.e. the gap vector at zero barrier."""
    parts = []
    if qp.has_state_bounds:
        parts += [(st.y - qp.ya) * st.lya, (qp.yb - st.y) * st.lyb]
    parts += [(st.z - qp.za) * st.lza, (qp.zb - st.z) * st.lzb]
    return np.concatenate(parts)


def grid_norm(v) -> float:
    """Euclidean norm scaled by 1/sqrt(len): a mesh-independent vector size."""
    v = np.asarray(v, dtype=float)
    return float(np.linalg.norm(v) / np.sqrt(max(v.size, 1)))


def measures(qp: QpProblem, st: IpmState):
    """(|xi_p|, |xi_d|, |xi_c|) as used by the stopping test."""
    xi_p, xi_d, _ = residuals(qp, st, 0.0)
    return grid_norm(xi_p), grid_norm(xi_d), grid_norm(complementarity(qp, st))


def build_theta(qp: QpProblem, st: IpmState) -> ThetaBlocks:
    _check_interior(qp, st)
    tz = st.lza / (st.z - qp.za) + st.lzb / (qp.zb - st.z)
    if qp.has_state_bounds:
        ty = st.lya / (st.y - qp.ya) + st.lyb / (qp.yb - st.y)
    else:
        ty = np.zeros(qp.n)
    w, v = np.split(tz, 2)
    return ThetaBlocks(ty, w, v)


class SaddleOperator:
    """Reduced Newton matrix [[H+Ty, 0, L'], [0, a*Mt+Tz, -Nbar'], [L, -Nbar, 0]]."""

    def __init__(self, qp: QpProblem, theta: ThetaBlocks):
        self.qp = qp
        self.theta = theta
        self.n = qp.n
        self.shape = (4 * qp.n, 4 * qp.n)
        self._ty = theta.y
        self._tz = theta.z

    def split(self, x):
        n = self.n
        return x[:n], x[n:3 * n], x[3 * n:]

    def matvec(self, x):
        qp = self.qp
        dy, dz, dp = self.split(np.asarray(x, dtype=float))
        o1 = qp.H @ dy + self._ty * dy + qp.L.T @ dp
        o2 = qp.alpha * qp.Mt(dz) + self._tz * dz - qp.NbarT(dp)
        o3 = qp.L @ dy - qp.Nbar(dz)
        return np.concatenate([o1, o2, o3])

    __call__ = matvec

    def blocks(self):
        """Sparse blocks (A_y, A_z, B) with B = [L, -Nbar]."""
        qp = self.qp
        Ay = (qp.H + sp.diags(self._ty)).tocsr()
        Az = (qp.alpha * qp.Mt_matrix() + sp.diags(self._tz)).tocsr()
        B = sp.hstack([qp.L, -qp.Nbar_matrix()], format="csr")
        return Ay, Az, B

    def to_sparse(self) -> sp.csr_matrix:
        qp = self.qp
        Ay, Az, _ = self.blocks()
        Nb = qp.Nbar_matrix()
        return sp.bmat([[Ay, None, qp.L.T], [None, Az, -Nb.T], [qp.L, -Nb, None]],
                       format="csr")


def assemble_newton(qp: QpProblem, st: IpmState, mu: float):
    """Reduced Newton operator and right-hand side for barrier ``mu``."""
    theta = build_theta(qp, st)
    r1 = qp.H @ (st.y - qp.yd) + qp.L.T @ st.p
    if qp.has_state_bounds:
        r1 = r1 - mu / (st.y - qp.ya) + mu / (qp.yb - st.y)
    r2 = (qp.alpha * qp.Mt(st.z) + qp.beta * qp.c - qp.NbarT(st.p)
          - mu / (st.z - qp.za) + mu / (qp.zb - st.z))
    r3 = qp.constraint_residual(st.y, st.z)
    return SaddleOperator(qp, theta), -np.concatenate([r1, r2, r3])


def recover_multiplier_steps(qp: QpProblem, st: IpmState, dy, dz, mu: float):
    ga = st.z - qp.za
    gb = qp.zb - st.z
    dlza = -st.lza / ga * dz - st.lza + mu / ga
    dlzb = st.lzb / gb * dz - st.lzb + mu / gb
    dlya = dlyb = None
    if qp.has_state_bounds:
        ha = st.y - qp.ya
        hb = qp.yb - st.y
        dlya = -st.lya / ha * dy - st.lya + mu / ha
        dlyb = st.lyb / hb * dy - st.lyb + mu / hb
    return dlya, dlyb, dlza, dlzb


def _ratio(x, dx, lo=None, hi=None):
    """Largest t >= 0 with lo < x + t dx < hi (may be inf)."""
    t = np.inf
    if lo is not None:
        neg = dx < 0
        if np.any(neg):
            t = min(t, np.min((x[neg] - lo[neg]) / -dx[neg]))
    if hi is not None:
        pos = dx > 0
        if np.any(pos):
            t = min(t, np.min((hi[pos] - x[pos]) / dx[pos]))
    return t


def step_lengths(qp: QpProblem, st: IpmState, d: Direction, alpha0: float = 0.995):
    """Fraction-to-boundary primal and dual step lengths, capped at 1."""
    tp = _ratio(st.z, d.dz, qp.za, qp.zb)
    zero_z = np.zeros_like(st.lza)
    td = min(_ratio(st.lza, d.dlza, zero_z), _ratio(st.lzb, d.dlzb, zero_z))
    if qp.has_state_bounds:
        tp = min(tp, _ratio(st.y, d.dy, qp.ya, qp.yb))
        zero_y = np.zeros_like(st.lya)
        td = min(td, _ratio(st.lya, d.dlya, zero_y), _ratio(st.lyb, d.dlyb, zero_y))
    return min(1.0, alpha0 * tp), min(1.0, alpha0 * td)


def initial_state(qp: QpProblem, mu0: float = 1.0) -> IpmState:
    n = qp.n
    width = qp.zb - qp.za
    z = 0.5 * (qp.za + qp.zb)
    delta = 1e-2 * width
    z = np.clip(z, qp.za + delta, qp.zb - delta)
    if qp.has_state_bounds:
        dy = 1e-2 * (qp.yb - qp.ya)
        y = np.clip(qp.yd, qp.ya + dy, qp.yb - dy)
        lya, lyb = np.ones(n), np.ones(n)
    else:
        y = qp.yd.copy()
        lya = lyb = None
    return IpmState(y=y, z=z, p=np.zeros(n), lza=np.ones(2 * n), lzb=np.ones(2 * n),
                    lya=lya, lyb=lyb, mu=mu0, k=0)


def take_step(st: IpmState, d: Direction, ap: float, ad: float, mu: float) -> IpmState:
    new = st.copy()
    new.y = st.y + ap * d.dy
    new.z = st.z + ap * d.dz
    new.p = st.p + ad * d.dp
    new.lza = st.lza + ad * d.dlza
    new.lzb = st.lzb + ad * d.dlzb
    if st.lya is not None:
        new.lya = st.lya + ad * d.dlya
        new.lyb = st.lyb + ad * d.dlyb
    new.mu = mu
    new.k = st.k + 1
    return new


def solve_direct(op: SaddleOperator, rhs):
    x = spla.splu(op.to_sparse().tocsc()).solve(rhs)
    res = np.linalg.norm(rhs - op.matvec(x)) / max(np.linalg.norm(rhs), 1e-300)
    return x, 1, res, True


def linear_solve(qp: QpProblem, op: SaddleOperator, rhs, params: IpmParams):
    """Solve one Newton system; returns (x, iterations, rel. residual, converged)."""
    if params.solver == "direct":
        return solve_direct(op, rhs)
    from .preconditioners import make_preconditioner
    from .krylov import gmres, minres
    prec = make_preconditioner(qp, op, params)
    solve = minres if params.solver == "minres-pd" else gmres
    x, rep = solve(op.matvec, rhs, prec, tol=params.lintol, maxit=params.linmaxit)
    return x, rep.iterations, rep.residual, rep.converged


def ipm_solve(qp: QpProblem, params: IpmParams | None = None, callback=None,
              state: IpmState | None = None):
    """Run the interior point method; returns (Solution, Stats)."""
    params = params or IpmParams()
    st = state.copy() if state is not None else initial_state(qp, params.mu0)
    mu = st.mu
    m = measures(qp, st)
    stats = Stats()
    theta = None

    def done(m):
        return m[0] <= params.eps_p and m[1] <= params.eps_d and m[2] <= params.eps_c

    while not done(m):
        if stats.nli >= params.max_iterations:
            sol = Solution(st.y, st.z, st.p, recover_control(st.z), st, theta)
            raise IpmNotConverged(f"no convergence after {stats.nli} iterations", sol, stats)
        t0 = time.process_time()
        mu = params.sigma * mu
        op, rhs = assemble_newton(qp, st, mu)
        theta = op.theta
        x, its, lres, ok = linear_solve(qp, op, rhs, params)
        if not ok:
            stats.linear_failures += 1
            log.warning("linear solver stopped at residual %.2e after %d iterations", lres, its)
            if params.raise_on_failure and not np.isfinite(lres):
                raise IpmError("linear solver broke down")
        dy, dz, dp = op.split(x)
        dlya, dlyb, dlza, dlzb = recover_multiplier_steps(qp, st, dy, dz, mu)
        d = Direction(dy, dz, dp, dlza, dlzb, dlya, dlyb)
        ap, ad = step_lengths(qp, st, d, params.alpha0)
        st = take_step(st, d, ap, ad, mu)
        m = measures(qp, st)
        rec = IterationRecord(k=st.k, mu=mu, xi_p=m[0], xi_d=m[1], xi_c=m[2],
                              lin_iters=int(its), lin_residual=float(lres), alpha_p=ap,
                              alpha_d=ad, cpu=time.process_time() - t0)
        stats.records.append(rec)
        log.info("k=%2d mu=%.2e |xi_p|=%.2e |xi_d|=%.2e |xi_c|=%.2e li=%d aP=%.3f aD=%.3f",
                 rec.k, mu, rec.xi_p, rec.xi_d, rec.xi_c, its, ap, ad)
        if callback is not None:
            callback(st, op, rec)
    stats.converged = True
    sol = Solution(st.y, st.z, st.p, recover_control(st.z), st, theta)
    return sol, stats
