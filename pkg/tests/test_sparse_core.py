import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ipmcontrol import sparse_core as sc


def test_triplets_sum_duplicates_and_sort():
    A = sc.from_triplets([0, 0, 1, 0], [1, 0, 1, 1], [1.0, 2.0, 3.0, 4.0], (2, 2))
    assert A.toarray().tolist() == [[2.0, 5.0], [0.0, 3.0]]
    assert A.has_sorted_indices and A.nnz == 3


def test_triplets_reject_out_of_range():
    with pytest.raises(IndexError):
        sc.from_triplets([2], [0], [1.0], (2, 2))


def test_spmv_trivial_cases():
    assert np.array_equal(sc.spmv(sp.identity(3, format="csr"), [1, 2, 3]), [1, 2, 3])
    assert np.array_equal(sc.spmv(sp.csr_matrix((2, 2)), [5, 7]), [0, 0])


def test_spmv_matches_dense(rng):
    A = rng.standard_normal((4, 4))
    x = rng.standard_normal(4)
    assert np.allclose(sc.spmv(sc.as_csr(A), x), A @ x, rtol=0, atol=1e-14)


def test_spmv_dimension_error():
    with pytest.raises(sc.DimensionError):
        sc.spmv(sp.identity(3, format="csr"), np.ones(4))


def test_spmv_nonfinite():
    with pytest.raises(FloatingPointError):
        sc.spmv(sc.as_csr([[np.inf]]), [1.0])


@settings(max_examples=30, deadline=None)
@given(arrays(float, (5, 5), elements=st.floats(-10, 10)),
       arrays(float, 5, elements=st.floats(-10, 10)),
       arrays(float, 5, elements=st.floats(-10, 10)),
       st.floats(-5, 5), st.floats(-5, 5))
def test_spmv_linear(A, x, y, a, b):
    A = sc.as_csr(A)
    lhs = sc.spmv(A, a * x + b * y)
    rhs = a * sc.spmv(A, x) + b * sc.spmv(A, y)
    scale = np.abs(A.toarray()).sum() * (abs(a) * np.abs(x).max() + abs(b) * np.abs(y).max()) + 1.0
    assert np.abs(lhs - rhs).max() <= 1e-13 * scale


def test_eig_sym_small_cases():
    assert np.allclose(sc.dense_eig_sym(np.diag([3.0, 1.0, 2.0])), [1, 2, 3])
    assert np.allclose(sc.dense_eig_sym([[2.0, 1.0], [1.0, 2.0]]), [1, 3])


def test_eig_sym_tridiagonal_closed_form():
    n = 4
    T = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    k = np.arange(1, n + 1)
    assert np.allclose(sc.dense_eig_sym(T), np.sort(2 - 2 * np.cos(k * np.pi / (n + 1))), atol=1e-14)


def test_eig_sym_rejects_nonsymmetric():
    with pytest.raises(ValueError):
        sc.dense_eig_sym([[1.0, 2.0], [0.0, 1.0]])


@settings(max_examples=30, deadline=None)
@given(arrays(float, (6, 6), elements=st.floats(-3, 3)))
def test_eig_sum_equals_trace(X):
    A = X + X.T
    ev = sc.dense_eig_sym(A)
    assert abs(ev.sum() - np.trace(A)) <= 1e-10 * max(1.0, np.abs(A).sum())


def _spd(rng, n):
    X = rng.standard_normal((n, n))
    return X @ X.T + n * np.eye(n)


def test_generalized_trivial_pencils(rng):
    B = _spd(rng, 5)
    assert np.allclose(sc.generalized_eig(B, B), 1.0)
    assert np.allclose(sc.generalized_eig(2 * B, B), 2.0)


def test_generalized_matches_dense_solve(rng):
    A, B = _spd(rng, 6), _spd(rng, 6)
    oracle = np.sort(np.linalg.eigvals(np.linalg.solve(B, A)).real)
    assert np.allclose(sc.generalized_eig(A, B), oracle, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_generalized_spd_positive(seed):
    rng = np.random.default_rng(seed)
    A, B = _spd(rng, 4), _spd(rng, 4)
    assert np.all(sc.generalized_eig(A, B) > 0)


def test_generalized_needs_spd_B():
    with pytest.raises(ValueError):
        sc.generalized_eig(np.eye(2), -np.eye(2))


def test_dense_cap():
    big = sp.identity(sc.DENSE_CAP + 1, format="csr")
    with pytest.raises(ValueError):
        sc.dense_eig_sym(big)


def test_is_symmetric():
    assert sc.is_symmetric([[1.0, 2.0], [2.0, 1.0]])
    assert not sc.is_symmetric([[1.0, 2.0], [2.5, 1.0]])


def test_matrix_market_round_trip(tmp_path):
    p = tmp_path / "eye.mtx"
    sc.write_matrix_market(p, sp.identity(3))
    assert (sc.read_matrix_market(p) != sp.identity(3)).nnz == 0
    assert p.read_text().splitlines()[0] == "%%MatrixMarket matrix coordinate real general"


def test_matrix_market_one_based(tmp_path):
    p = tmp_path / "a.mtx"
    p.write_text("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 2 7.5\n")
    A = sc.read_matrix_market(p)
    assert A[0, 1] == 7.5 and A.nnz == 1


def test_matrix_market_symmetric_round_trip(tmp_path, rng):
    X = rng.standard_normal((4, 4))
    A = sc.as_csr(X + X.T)
    p = tmp_path / "s.mtx"
    sc.write_matrix_market(p, A, symmetric=True)
    assert np.array_equal(sc.read_matrix_market(p).toarray(), A.toarray())


def test_matrix_market_bad_header(tmp_path):
    p = tmp_path / "bad.mtx"
    p.write_text("%%MatrixMarket matrix array real general\n1 1\n1.0\n")
    with pytest.raises(sc.MatrixMarketError):
        sc.read_matrix_market(p)
