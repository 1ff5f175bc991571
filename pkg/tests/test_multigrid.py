import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from ipmcontrol import fem, multigrid as mg
from ipmcontrol.fem import Grid


def poisson(level):
    return fem.assemble_stiffness_poisson(Grid(level))


def test_prolongation_shapes_and_constants():
    P = mg.prolongation(4)
    assert P.shape == (225, 49)
    # interpolates the coarse function 1 to 1 away from the boundary layer
    v = (P @ np.ones(49)).reshape(15, 15)
    assert np.allclose(v[1:-1, 1:-1], 1.0)


def test_level_of():
    assert mg.level_of(49) == 3
    with pytest.raises(ValueError):
        mg.level_of(50)


@pytest.mark.parametrize("level", [3, 4, 5])
def test_galerkin_coarse_matches_assembled(level):
    P = mg.prolongation(level)
    for asm in (fem.assemble_stiffness_poisson, fem.assemble_mass):
        coarse = P.T @ asm(Grid(level)) @ P
        assert abs(coarse - asm(Grid(level - 1))).max() <= 1e-14 * abs(asm(Grid(level - 1))).max() * 10


def test_galerkin_of_identity():
    h = mg.MgHierarchy(sp.identity(49, format="csr"))
    P = mg.prolongation(3)
    assert np.allclose(h.coarse, (P.T @ P).toarray())


@pytest.mark.parametrize("level", [2, 3, 6])
def test_depth(level):
    assert mg.MgHierarchy(poisson(level)).depth == level - 2


def test_zero_rhs():
    h = mg.MgHierarchy(poisson(4))
    assert np.all(h.solve(np.zeros(225)) == 0)


def test_poisson_three_cycles(rng):
    K = poisson(5)
    b = rng.standard_normal(K.shape[0])
    x = mg.v_cycle(mg.build_hierarchy(K), b, 3)
    assert np.linalg.norm(b - K @ x) <= 1e-3 * np.linalg.norm(b)


def test_diagonal_shift_does_not_slow_down(rng):
    K = poisson(5)
    b = rng.standard_normal(K.shape[0])
    shifted = (K + sp.diags(np.full(K.shape[0], 10.0))).tocsr()
    r0 = np.linalg.norm(b - K @ mg.MgHierarchy(K).solve(b, 1))
    r1 = np.linalg.norm(b - shifted @ mg.MgHierarchy(shifted).solve(b, 1))
    assert r1 <= r0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(-2, 2), st.floats(-2, 2))
def test_vcycle_linear(seed, a, c):
    rng = np.random.default_rng(seed)
    h = mg.MgHierarchy(poisson(4))
    x, y = rng.standard_normal((2, 225))
    lhs = h.solve(a * x + c * y)
    rhs = a * h.solve(x) + c * h.solve(y)
    assert np.abs(lhs - rhs).max() <= 1e-12 * (np.abs(h.solve(x)).max() + np.abs(h.solve(y)).max()) * 3


def test_vcycle_symmetric_positive_for_symmetric_operator(rng):
    K = (poisson(4) + sp.diags(rng.uniform(0, 1, 225))).tocsr()
    h = mg.MgHierarchy(K)
    V = np.column_stack([h.solve(e) for e in np.eye(225)])
    assert np.abs(V - V.T).max() <= 1e-12 * np.abs(V).max()
    for _ in range(20):
        x = rng.standard_normal(225)
        assert x @ h.solve(x) > 0


def test_transpose_hierarchy_is_adjoint(rng):
    L = fem.assemble_convdiff(Grid(4), 1e-2)
    lv = lambda lev: fem.assemble_convdiff(Grid(lev), 1e-2)
    h = mg.MgHierarchy(L, coarse_ops=mg.rediscretized_levels(lv, 4))
    hT = h.transpose()
    x, y = rng.standard_normal((2, 225))
    assert np.isclose(hT.solve(x) @ y, x @ h.solve(y), rtol=1e-12)


@pytest.mark.parametrize("eps", [1e-1, 1e-2, 5e-3])
def test_convdiff_rediscretized_levels_converge(eps, rng):
    level = 6
    L = fem.assemble_convdiff(Grid(level), eps)
    extra = sp.diags(np.full(L.shape[0], 1e-4))
    A = (L + extra).tocsr()
    ops = mg.rediscretized_levels(lambda lev: fem.assemble_convdiff(Grid(lev), eps), level, extra)
    h = mg.MgHierarchy(A, coarse_ops=ops)
    b = rng.standard_normal(A.shape[0])
    assert np.linalg.norm(b - A @ h.solve(b)) <= 1e-3 * np.linalg.norm(b)


def test_coarse_ops_count_checked():
    with pytest.raises(ValueError):
        mg.MgHierarchy(poisson(4), coarse_ops=[poisson(3)] * 3)


def test_gauss_seidel_sweep_and_zero_diagonal(rng):
    K = poisson(3).tocsr()
    b = rng.standard_normal(49)
    x = mg.gauss_seidel(K, b, np.zeros(49), sweeps=200)
    assert np.allclose(K @ x, b, atol=1e-8)
    with pytest.raises(ZeroDivisionError):
        mg.gauss_seidel(sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]])), np.ones(2), np.zeros(2))


def test_divergence_is_reported(rng):
    # an indefinite operator makes Gauss-Seidel blow up
    A = (poisson(4) - sp.identity(225) * 2.0).tocsr()
    h = mg.MgHierarchy(A)
    with pytest.raises(mg.MultigridDivergence):
        h.solve(rng.standard_normal(225))
