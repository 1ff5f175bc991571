"""Sparse and dense linear-algebra helpers.

Sparse matrices are ``scipy.sparse.csr_matrix`` objects throughout the
package; this module adds the checked entry points the solvers rely on
(triplet assembly, matvec, desk-scale eigensolvers, Matrix Market I/O).
"""

from __future__ import annotations

import os

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp

DENSE_CAP = 5000


class DimensionError(ValueError):
    pass


class MatrixMarketError(ValueError):
    pass


def from_triplets(rows, cols, vals, shape) -> sp.csr_matrix:
    """Build a CSR matrix from (row, col, value) triplets, summing duplicates.

    The result has sorted column indices within each row and no duplicate
    (row, col) pairs.
    """
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    nr, nc = shape
    if rows.size and (rows.min() < 0 or rows.max() >= nr or cols.min() < 0 or cols.max() >= nc):
        raise IndexError("triplet index outside matrix shape")
    A = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def as_csr(A) -> sp.csr_matrix:
    if sp.issparse(A):
        A = A.tocsr()
    else:
        A = sp.csr_matrix(np.asarray(A, dtype=float))
    A.sum_duplicates()
    A.sort_indices()
    return A


def diag_matrix(d) -> sp.csr_matrix:
    d = np.asarray(d, dtype=float)
    return sp.diags(d, 0, format="csr")


def is_symmetric(A, rtol: float = 1e-14) -> bool:
    """Check |A_ij - A_ji| <= rtol * max|A| over stored entries."""
    A = as_csr(A)
    if A.shape[0] != A.shape[1]:
        return False
    if A.nnz == 0:
        return True
    scale = np.abs(A.data).max()
    diff = A - A.T
    if diff.nnz == 0:
        return True
    return bool(np.abs(diff.data).max() <= rtol * scale)


def spmv(A, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise DimensionError(f"cannot multiply {A.shape} matrix by vector of length {x.shape}")
    y = A @ x
    y = np.asarray(y, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite entries in matrix-vector product")
    return y


def _densify(A) -> np.ndarray:
    if sp.issparse(A):
        if max(A.shape) > DENSE_CAP:
            raise ValueError(f"matrix of size {A.shape} exceeds the dense verification cap {DENSE_CAP}")
        return A.toarray()
    A = np.asarray(A, dtype=float)
    if max(A.shape) > DENSE_CAP:
        raise ValueError(f"matrix of size {A.shape} exceeds the dense verification cap {DENSE_CAP}")
    return A


def dense_eig_sym(A, return_vectors: bool = False, rtol: float = 1e-12):
    """Ascending eigenvalues of a symmetric matrix (densified)."""
    Ad = _densify(A)
    if Ad.shape[0] != Ad.shape[1]:
        raise DimensionError("matrix must be square")
    scale = max(np.abs(Ad).max(), np.finfo(float).tiny)
    if np.abs(Ad - Ad.T).max() > rtol * scale:
        raise ValueError("matrix is not symmetric")
    Ad = 0.5 * (Ad + Ad.T)
    if return_vectors:
        return sla.eigh(Ad)
    return sla.eigh(Ad, eigvals_only=True)


def generalized_eig(A, B, symmetric: bool | None = None):
    """Eigenvalues of B^{-1} A for symmetric positive definite B.

    When A is symmetric the pencil is reduced with the Cholesky factor of B
    and real ascending eigenvalues are returned; otherwise the complex
    spectrum of the reduced matrix is returned sorted by real part.
    """
    Ad = _densify(A)
    Bd = _densify(B)
    if Ad.shape != Bd.shape or Ad.shape[0] != Ad.shape[1]:
        raise DimensionError("pencil matrices must be square and of equal size")
    Bd = 0.5 * (Bd + Bd.T)
    try:
        C = sla.cholesky(Bd, lower=True)
    except sla.LinAlgError as exc:
        raise ValueError("B is not positive definite") from exc
    if symmetric is None:
        scale = max(np.abs(Ad).max(), np.finfo(float).tiny)
        symmetric = np.abs(Ad - Ad.T).max() <= 1e-12 * scale
    # C^{-1} A C^{-T} is similar to B^{-1} A
    X = sla.solve_triangular(C, Ad, lower=True)
    K = sla.solve_triangular(C, X.T, lower=True).T
    if symmetric:
        K = 0.5 * (K + K.T)
        return sla.eigh(K, eigvals_only=True)
    ev = sla.eigvals(K)
    return ev[np.argsort(ev.real, kind="stable")]


def write_matrix_market(path, A, symmetric: bool = False, comment: str = "") -> None:
    A = as_csr(A)
    field = "real"
    sym = "symmetric" if symmetric else "general"
    if symmetric and not is_symmetric(A):
        raise ValueError("matrix flagged symmetric is not symmetric")
    scipy.io.mmwrite(os.fspath(path), A.tocoo(), comment=comment, field=field,
                     precision=17, symmetry=sym)


def read_matrix_market(path) -> sp.csr_matrix:
    path = os.fspath(path)
    with open(path) as fh:
        header = fh.readline().strip()
    parts = header.split()
    if len(parts) != 5 or parts[0] != "%%MatrixMarket":
        raise MatrixMarketError(f"malformed Matrix Market header: {header!r}")
    if parts[1].lower() != "matrix" or parts[2].lower() != "coordinate":
        raise MatrixMarketError("only coordinate matrices are supported")
    if parts[3].lower() not in ("real", "integer"):
        raise MatrixMarketError(f"unsupported field {parts[3]!r}")
    if parts[4].lower() not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry {parts[4]!r}")
    try:
        A = scipy.io.mmread(path)
    except ValueError as exc:
        raise MatrixMarketError(str(exc)) from exc
    return as_csr(A)
