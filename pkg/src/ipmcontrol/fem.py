"""Q1 finite elements on uniform grids of the unit square.

Matrices are assembled on the full nodal grid (boundary included) and then
restricted to interior nodes, which eliminates homogeneous Dirichlet data.
Interior nodes are numbered lexicographically, x1 running fastest.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .sparse_core import from_triplets

# 2-point Gauss rule on [0, 1]
_GP = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GW = np.array([0.5, 0.5])
# local node k = a + 2*b sits at reference corner (a, b)
_CORNERS = np.array([(0, 0), (1, 0), (0, 1), (1, 1)])


@dataclass(frozen=True)
class Grid:
    """Uniform grid of (2**level)**2 square elements on (0,1)^2."""

    level: int

    def __post_init__(self):
        if int(self.level) != self.level or self.level < 1:
            raise ValueError(f"grid level must be a positive integer, got {self.level!r}")

    @property
    def h(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def m(self) -> int:
        """Number of intervals per direction."""
        return 2 ** self.level

    @property
    def N(self) -> int:
        """Interior nodes per direction."""
        return self.m - 1

    @property
    def n(self) -> int:
        return self.N ** 2

    @property
    def n_full(self) -> int:
        return (self.m + 1) ** 2

    @cached_property
    def interior_index(self) -> np.ndarray:
        """Full-grid node numbers of the interior nodes, in interior order."""
        idx = np.arange(1, self.m)
        I, J = np.meshgrid(idx, idx, indexing="xy")
        return (I + (self.m + 1) * J).ravel()

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(1, self.m) * self.h
        X1, X2 = np.meshgrid(x, x, indexing="xy")
        return X1.ravel(), X2.ravel()

    def full_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(0, self.m + 1) * self.h
        X1, X2 = np.meshgrid(x, x, indexing="xy")
        return X1.ravel(), X2.ravel()

    def extend_by_zero(self, v: np.ndarray) -> np.ndarray:
        """Nodal values on the full grid, zero on the Dirichlet boundary."""
        out = np.zeros(self.n_full)
        out[self.interior_index] = v
        return out


@dataclass(frozen=True)
class ObservationRegion:
    """Axis-aligned box [a1, b1] x [a2, b2]."""

    a1: float
    b1: float
    a2: float
    b2: float

    def __post_init__(self):
        if self.a1 > self.b1 or self.a2 > self.b2:
            raise ValueError("observation box has inverted bounds")
        if self.b1 < 0 or self.a1 > 1 or self.b2 < 0 or self.a2 > 1:
            raise ValueError("observation box does not intersect the unit square")

    @classmethod
    def parse(cls, text: str) -> "ObservationRegion":
        vals = [float(t) for t in text.replace(" ", "").split(",")]
        if len(vals) != 4:
            raise ValueError(f"expected a1,b1,a2,b2 but got {text!r}")
        return cls(*vals)

    @property
    def area(self) -> float:
        w = max(0.0, min(self.b1, 1.0) - max(self.a1, 0.0))
        v = max(0.0, min(self.b2, 1.0) - max(self.a2, 0.0))
        return w * v


def _basis(xi, eta):
    """Q1 reference basis values and reference gradients at points (xi, eta).

    Returns arrays of shape (..., 4) and (..., 4, 2).
    """
    xi = np.asarray(xi, dtype=float)[..., None]
    eta = np.asarray(eta, dtype=float)[..., None]
    a = _CORNERS[:, 0]
    b = _CORNERS[:, 1]
    fx = np.where(a == 1, xi, 1.0 - xi)
    fy = np.where(b == 1, eta, 1.0 - eta)
    dfx = np.where(a == 1, 1.0, -1.0) * np.ones_like(xi)
    dfy = np.where(b == 1, 1.0, -1.0) * np.ones_like(eta)
    phi = fx * fy
    grad = np.stack([dfx * fy, fx * dfy], axis=-1)
    return phi, grad


def _element_nodes(grid: Grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Element lower-left indices and full-grid node numbers (nel, 4)."""
    m = grid.m
    ex, ey = np.meshgrid(np.arange(m), np.arange(m), indexing="xy")
    ex = ex.ravel()
    ey = ey.ravel()
    nodes = (ex[:, None] + _CORNERS[None, :, 0]) + (m + 1) * (ey[:, None] + _CORNERS[None, :, 1])
    return ex, ey, nodes


def _scatter(grid: Grid, nodes: np.ndarray, local: np.ndarray) -> sp.csr_matrix:
    """Sum element matrices (nel, 4, 4) into a full-grid CSR matrix."""
    rows = np.repeat(nodes, 4, axis=1)
    cols = np.tile(nodes, (1, 4))
    return from_triplets(rows, cols, local.reshape(len(nodes), 16), (grid.n_full, grid.n_full))


def _restrict(grid: Grid, A: sp.csr_matrix) -> sp.csr_matrix:
    idx = grid.interior_index
    A = A[idx][:, idx].tocsr()
    A.sort_indices()
    return A


def _quadrature():
    q1, q2 = np.meshgrid(_GP, _GP, indexing="xy")
    w = np.outer(_GW, _GW).ravel()
    return q1.ravel(), q2.ravel(), w


def full_mass(grid: Grid) -> sp.csr_matrix:
    """Consistent Q1 mass matrix on the full grid, boundary nodes included."""
    xi, eta, w = _quadrature()
    phi, _ = _basis(xi, eta)
    loc = grid.h ** 2 * np.einsum("q,qk,ql->kl", w, phi, phi)
    _, _, nodes = _element_nodes(grid)
    return _scatter(grid, nodes, np.broadcast_to(loc, (len(nodes), 4, 4)))


def assemble_mass(grid: Grid, variant: str = "consistent") -> sp.csr_matrix:
    """Interior mass matrix; ``lumped`` gives diag of the basis integrals."""
    Mf = full_mass(grid)
    if variant == "consistent":
        return _restrict(grid, Mf)
    if variant == "lumped":
        d = np.asarray(Mf.sum(axis=1)).ravel()[grid.interior_index]
        return sp.diags(d, 0, format="csr")
    raise ValueError(f"unknown mass variant {variant!r}")


def assemble_stiffness_poisson(grid: Grid) -> sp.csr_matrix:
    xi, eta, w = _quadrature()
    _, grad = _basis(xi, eta)
    # reference gradients scale by 1/h and the Jacobian is h^2
    loc = np.einsum("q,qkd,qld->kl", w, grad, grad)
    _, _, nodes = _element_nodes(grid)
    return _restrict(grid, _scatter(grid, nodes, np.broadcast_to(loc, (len(nodes), 4, 4))))


def default_wind(x1, x2):
    return 2.0 * x2 * (1.0 - x1 ** 2), -2.0 * x1 * (1.0 - x2 ** 2)


def supg_parameter(wind_norm, h: float, eps: float):
    """Element stabilization delta_K = h/(2|w|) * max(0, 1 - 1/Pe_K)."""
    wind_norm = np.asarray(wind_norm, dtype=float)
    out = np.zeros_like(wind_norm)
    nz = wind_norm > 0
    pe = wind_norm[nz] * h / (2.0 * eps)
    out[nz] = h / (2.0 * wind_norm[nz]) * np.maximum(0.0, 1.0 - 1.0 / pe)
    return out


def assemble_convdiff(grid: Grid, eps: float, wind=default_wind, supg: bool = True) -> sp.csr_matrix:
    """SUPG-stabilized Q1 discretization of -eps*Lap(y) + w.grad(y).

    Rows index test functions, columns trial functions.
    """
    if not eps > 0:
        raise ValueError(f"diffusion coefficient must be positive, got {eps}")
    h = grid.h
    xi, eta, w = _quadrature()
    phi, grad = _basis(xi, eta)
    ex, ey, nodes = _element_nodes(grid)
    X1 = (ex[:, None] + xi[None, :]) * h
    X2 = (ey[:, None] + eta[None, :]) * h
    w1, w2 = wind(X1, X2)
    W = np.stack(np.broadcast_arrays(np.asarray(w1, float), np.asarray(w2, float)), axis=-1)  # (nel, q, 2)

    stiff = np.einsum("q,qkd,qld->kl", w, grad, grad)
    # (w . grad phi_l) phi_k * h^2 / h
    wgrad = np.einsum("eqd,qld->eql", W, grad)
    conv = h * np.einsum("q,eql,qk->ekl", w, wgrad, phi)
    loc = eps * stiff[None] + conv
    if supg:
        c1, c2 = wind((ex + 0.5) * h, (ey + 0.5) * h)
        wn = np.hypot(np.broadcast_to(c1, ex.shape), np.broadcast_to(c2, ex.shape))
        delta = supg_parameter(wn, h, eps)
        # delta (w.grad phi_l)(w.grad phi_k) * h^2 / h^2; Q1 Laplacians vanish elementwise
        loc = loc + delta[:, None, None] * np.einsum("q,eql,eqk->ekl", w, wgrad, wgrad)
    return _restrict(grid, _scatter(grid, nodes, loc))


def assemble_partial_mass(grid: Grid, region: ObservationRegion) -> sp.csr_matrix:
    """Mass matrix of the L2 inner product over region ∩ Ω.

    Each element is integrated exactly over its intersection with the box,
    since 2x2 Gauss points on the sub-rectangle integrate Q1 products exactly.
    """
    h = grid.h
    ex, ey, nodes = _element_nodes(grid)
    s0 = np.clip(region.a1 / h - ex, 0.0, 1.0)
    s1 = np.clip(region.b1 / h - ex, 0.0, 1.0)
    t0 = np.clip(region.a2 / h - ey, 0.0, 1.0)
    t1 = np.clip(region.b2 / h - ey, 0.0, 1.0)
    ds = s1 - s0
    dt = t1 - t0
    keep = (ds > 0) & (dt > 0)
    if not np.any(keep):
        return sp.csr_matrix((grid.n, grid.n))
    xi = s0[keep, None, None] + ds[keep, None, None] * _GP[None, None, :]
    eta = t0[keep, None, None] + dt[keep, None, None] * _GP[None, :, None]
    xi, eta = np.broadcast_arrays(xi, eta)
    phi, _ = _basis(xi.reshape(-1, 4), eta.reshape(-1, 4))
    wq = np.outer(_GW, _GW).ravel()
    jac = (h ** 2) * ds[keep] * dt[keep]
    loc = jac[:, None, None] * np.einsum("q,eqk,eql->ekl", wq, phi, phi)
    Mf = _scatter(grid, nodes[keep], loc)
    return _restrict(grid, Mf)


def interpolate(grid: Grid, f) -> np.ndarray:
    """Nodal interpolant at interior nodes; ``f`` may be a constant."""
    x1, x2 = grid.coordinates()
    if callable(f):
        vals = f(x1, x2)
    else:
        vals = f
    return np.broadcast_to(np.asarray(vals, dtype=float), x1.shape).copy()
