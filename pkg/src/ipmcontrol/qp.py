"""Split-variable quadratic program for L1-regularized optimal control.

The control is written u = w - v with w, v >= 0 and z = [w; v], which turns
the weighted l1 term into a linear one.  A ``QpProblem`` stores the blocks of

    min  1/2 (y - yd)' H (y - yd) + alpha/2 z' Mt z + beta c' z
    s.t. L y - Nbar z = f,   za <= z <= zb,   ya <= y <= yb

with Mt = [[Mc, -Mc], [-Mc, Mc]], Nbar = [N, -N] and c = [d; d].  For the
steady problems H = Mc = N = M (H = M_s under partial observation) and d is
the lumped mass diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import Grid, ObservationRegion

PDES = ("poisson", "convdiff", "heat")
BOUND_INFLATION = 1e-12


def poisson_target(x1, x2):
    return np.sin(np.pi * x1) * np.sin(np.pi * x2)


def gaussian_target(x1, x2):
    return np.exp(-64.0 * ((x1 - 0.5) ** 2 + (x2 - 0.5) ** 2))


@dataclass
class ControlProblem:
    """Continuous problem description; scalar or callable data on (0,1)^2."""

    pde: str = "poisson"
    ell: int = 5
    alpha: float = 1e-2
    beta: float = 1e-2
    yd: float | Callable | None = None
    f: float | Callable = 0.0
    ua: float | Callable = -2.0
    ub: float | Callable = 1.5
    ya: float | Callable | None = None
    yb: float | Callable | None = None
    obs_box: ObservationRegion | None = None
    eps: float = 1e-1
    wind: Callable = fem.default_wind
    tau: float = 0.04
    T: float = 1.0
    mass: str = "consistent"
    time_rule: str = "rectangle"

    def __post_init__(self):
        if self.pde not in PDES:
            raise ValueError(f"unknown pde {self.pde!r}; expected one of {PDES}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if (self.ya is None) != (self.yb is None):
            raise ValueError("state bounds must be given as a pair")
        if self.yd is None:
            self.yd = gaussian_target if self.pde == "convdiff" else poisson_target
        if self.mass not in ("consistent", "lumped"):
            raise ValueError(f"unknown mass variant {self.mass!r}")

    @property
    def has_state_bounds(self) -> bool:
        return self.ya is not None


@dataclass
class QpProblem:
    L: sp.csr_matrix
    H: sp.csr_matrix
    Mc: sp.csr_matrix
    N: sp.csr_matrix
    d: np.ndarray
    yd: np.ndarray
    f: np.ndarray
    za: np.ndarray
    zb: np.ndarray
    alpha: float
    beta: float
    ya: np.ndarray | None = None
    yb: np.ndarray | None = None
    grid: Grid | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def has_state_bounds(self) -> bool:
        return self.ya is not None

    @property
    def symmetric(self) -> bool:
        return bool(self.meta.get("symmetric_L", False))

    @property
    def c(self) -> np.ndarray:
        """Gradient of the l1 term with respect to z (without beta)."""
        return np.concatenate([self.d, self.d])

    def Mt(self, z):
        w, v = np.split(z, 2)
        t = self.Mc @ (w - v)
        return np.concatenate([t, -t])

    def Nbar(self, z):
        w, v = np.split(z, 2)
        return self.N @ (w - v)

    def NbarT(self, p):
        t = self.N.T @ p
        return np.concatenate([t, -t])

    def objective(self, y, z) -> float:
        e = y - self.yd
        return float(0.5 * e @ (self.H @ e) + 0.5 * self.alpha * z @ self.Mt(z)
                     + self.beta * self.c @ z)

    def constraint_residual(self, y, z):
        return self.L @ y - self.Nbar(z) - self.f

    def Mt_matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.Mc, -self.Mc], [-self.Mc, self.Mc]], format="csr")

    def Nbar_matrix(self) -> sp.csr_matrix:
        return sp.hstack([self.N, -self.N], format="csr")


def split_bounds(ua, ub):
    """Bounds on z = [w; v] induced by ua <= u <= ub."""
    ua = np.atleast_1d(np.asarray(ua, dtype=float))
    ub = np.atleast_1d(np.asarray(ub, dtype=float))
    if np.any(ua > ub):
        raise ValueError("lower control bound exceeds upper bound")
    za = np.concatenate([np.maximum(ua, 0.0), -np.minimum(ub, 0.0)])
    zb = np.concatenate([np.maximum(ub, 0.0), -np.minimum(ua, 0.0)])
    return za, zb


def canonical_split(u):
    u = np.asarray(u, dtype=float)
    return np.concatenate([np.maximum(u, 0.0), np.maximum(-u, 0.0)])


def recover_control(z):
    w, v = np.split(np.asarray(z, dtype=float), 2)
    return w - v


def sparsity_metric(u, threshold: float = 1e-2) -> float:
    """Percentage of components with |u_i| below the threshold."""
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        return 100.0
    return 100.0 * np.count_nonzero(np.abs(u) < threshold) / u.size


def l1_norm(u) -> float:
    return float(np.abs(np.asarray(u, dtype=float)).sum())


def _check_signs(lo, hi, name):
    if np.any(lo > 0) or np.any(hi < 0):
        raise ValueError(f"{name} bounds must satisfy lower <= 0 <= upper")
    if np.any(lo > hi):
        raise ValueError(f"{name} lower bound exceeds upper bound")


def _convdiff_on_level(level, eps, wind):
    return fem.assemble_convdiff(Grid(level), eps, wind=wind)


def state_operator(problem: ControlProblem, grid: Grid) -> sp.csr_matrix:
    if problem.pde == "convdiff":
        return fem.assemble_convdiff(grid, problem.eps, wind=problem.wind)
    return fem.assemble_stiffness_poisson(grid)


def build_qp(problem: ControlProblem, grid: Grid | None = None) -> QpProblem:
    """Discretize a steady control problem (Poisson or convection-diffusion)."""
    if problem.pde == "heat":
        from .time_dependent import build_heat_qp
        return build_heat_qp(problem, grid)
    grid = grid or Grid(problem.ell)
    M = fem.assemble_mass(grid, problem.mass)
    D = fem.assemble_mass(grid, "lumped").diagonal()
    L = state_operator(problem, grid)
    H = M if problem.obs_box is None else fem.assemble_partial_mass(grid, problem.obs_box)

    ua = fem.interpolate(grid, problem.ua)
    ub = fem.interpolate(grid, problem.ub)
    _check_signs(ua, ub, "control")
    za, zb = split_bounds(ua, ub)
    zb = np.maximum(zb, za + BOUND_INFLATION)
    ya = yb = None
    if problem.has_state_bounds:
        ya = fem.interpolate(grid, problem.ya)
        yb = fem.interpolate(grid, problem.yb)
        _check_signs(ya, yb, "state")
        yb = np.maximum(yb, ya + BOUND_INFLATION)

    meta = {"pde": problem.pde, "symmetric_L": problem.pde == "poisson",
            "partial": problem.obs_box is not None, "mass": problem.mass}
    if problem.pde == "convdiff":
        # coarse multigrid levels need their own SUPG stabilization
        meta["assemble_L"] = partial(_convdiff_on_level, eps=problem.eps, wind=problem.wind)
    return QpProblem(
        L=L, H=H, Mc=M, N=M, d=D,
        yd=fem.interpolate(grid, problem.yd),
        f=M @ fem.interpolate(grid, problem.f),
        za=za, zb=zb, ya=ya, yb=yb,
        alpha=problem.alpha, beta=problem.beta, grid=grid, meta=meta,
    )


# ---------------------------------------------------------------------------
# plain-text configuration files: one ``key = value`` per line, '#' comments

_FLOAT_KEYS = {"alpha", "beta", "ua", "ub", "ya", "yb", "tau", "T", "sigma", "eps",
               "mu0", "lintol"}
_INT_KEYS = {"ell", "maxit"}
_STR_KEYS = {"pde", "solver", "obs_box", "out", "mass", "time_rule"}


def parse_config(text: str) -> dict:
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key in _FLOAT_KEYS:
            cfg[key] = float(value)
        elif key in _INT_KEYS:
            cfg[key] = int(value)
        elif key in _STR_KEYS:
            cfg[key] = value
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        return parse_config(fh.read())


def problem_from_config(cfg: dict) -> ControlProblem:
    kw = {k: cfg[k] for k in ("pde", "ell", "alpha", "beta", "ua", "ub", "ya", "yb",
                              "eps", "tau", "T", "mass", "time_rule") if k in cfg}
    if cfg.get("obs_box"):
        kw["obs_box"] = ObservationRegion.parse(cfg["obs_box"])
    return ControlProblem(**kw)


def full_grid_control(qp: QpProblem, u) -> np.ndarray:
    """Control values on every grid node, boundary zeros included.

    Space-time controls are extended block by block.
    """
    u = np.asarray(u, dtype=float)
    n = qp.grid.n
    if u.size % n:
        raise ValueError("control length is not a multiple of the grid size")
    return np.concatenate([qp.grid.extend_by_zero(b) for b in u.reshape(-1, n)])
