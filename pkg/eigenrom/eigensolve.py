"""
Eigensolve - symmetric-definite generalized eigenproblems.

A u = lambda B u is reduced through the Cholesky factor B = L L^T to the
standard problem for L^{-1} A L^{-T}, which LAPACK tridiagonalizes
(Householder) and diagonalizes; eigenvectors are back-transformed,
B-normalized, sign-fixed and checked against their residual.
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from eigenrom import settings
from eigenrom.errors import ConfigError, EigenSolverError

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-10
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class Eigenpair:
    value: float
    vector: np.ndarray
    index: int
    # Newton iterations spent on a nonlinear solve; 0 for direct solves.
    iterations: int = 0


def _dense(matrix) -> np.ndarray:
    if sp.issparse(matrix):
        return matrix.toarray()
    return np.array(matrix, dtype=float)


def _solve_dense(a: np.ndarray, b: np.ndarray, k: int):
    n = a.shape[0]
    if n > settings.DENSE_LIMIT:
        raise EigenSolverError(f"N_h={n} exceeds the dense solver limit {settings.DENSE_LIMIT}")

    subset = k < n
    try:
        return scipy.linalg.eigh(
            a, b,
            subset_by_index=[0, k - 1] if subset else None,
            driver="gvx" if subset else "gv",
            check_finite=True,
        )
    except np.linalg.LinAlgError as e:
        if "positive definite" in str(e):
            raise EigenSolverError("B not positive definite") from e
        raise EigenSolverError(f"Symmetric eigensolver did not converge: {e}") from e
    except ValueError as e:
        raise EigenSolverError(f"Pencil contains non-finite entries: {e}") from e


def _solve_sparse(a: sp.csc_matrix, b: sp.csc_matrix, k: int):
    """Shift-invert Lanczos around zero; A must be positive definite."""
    if not (np.all(np.isfinite(a.data)) and np.all(np.isfinite(b.data))):
        raise EigenSolverError("Pencil contains non-finite entries")
    try:
        values, vectors = scipy.sparse.linalg.eigsh(a, k=k, M=b, sigma=0.0, which="LM")
    except RuntimeError as e:
        raise EigenSolverError(f"Sparse eigensolver failed: {e}") from e
    order = np.argsort(values)
    return values[order], vectors[:, order]


def solve_generalized(a_matrix, b_matrix, k: int, verify: bool = True) -> List[Eigenpair]:
    """
    The k algebraically smallest eigenpairs of (A, B), ascending, u^T B u = 1.

    Sparse pencils above ``settings.SPARSE_THRESHOLD`` unknowns go through
    shift-invert Lanczos; everything else through the dense LAPACK path.
    """
    n = a_matrix.shape[0]
    use_sparse = (sp.issparse(a_matrix) and sp.issparse(b_matrix)
                  and n > settings.SPARSE_THRESHOLD and k < n - 1)
    if use_sparse:
        a = sp.csc_matrix(a_matrix, dtype=float)
        b = sp.csc_matrix(b_matrix, dtype=float)
    else:
        a = _dense(a_matrix)
        b = _dense(b_matrix)
    if a.shape != (n, n) or b.shape != (n, n):
        raise ConfigError(f"Pencil must be square and conformal, got {a.shape} and {b.shape}")
    if not 1 <= k <= n:
        raise ConfigError(f"Requested k={k} eigenpairs from a problem of size {n}")

    values, vectors = _solve_sparse(a, b, k) if use_sparse else _solve_dense(a, b, k)

    b_norms = np.sqrt(np.einsum("ij,ij->j", vectors, b @ vectors))
    vectors = vectors / b_norms

    pairs = [fix_sign(Eigenpair(value=float(values[i]), vector=vectors[:, i].copy(), index=i))
             for i in range(k)]

    if verify:
        _verify(a, b, pairs)

    logger.debug("Generalized eigensolve N_h=%d, k=%d: lambda_0=%.10g", n, k, pairs[0].value)
    return pairs


def _frobenius(matrix) -> float:
    if sp.issparse(matrix):
        return float(scipy.sparse.linalg.norm(matrix, "fro"))
    return float(np.linalg.norm(matrix, "fro"))


def _verify(a, b, pairs: List[Eigenpair]):
    a_norm = _frobenius(a)
    b_norm = _frobenius(b)
    for pair in pairs:
        u = pair.vector
        bu = b @ u
        if abs(u @ bu - 1.0) > NORMALIZATION_TOL:
            raise EigenSolverError(f"Eigenvector {pair.index} is not B-normalized")
        residual = np.linalg.norm(a @ u - pair.value * bu)
        if residual > RESIDUAL_TOL * (a_norm + abs(pair.value) * b_norm):
            raise EigenSolverError(
                f"Eigenpair {pair.index} residual {residual:.3e} above tolerance")


def solve_symmetric(matrix) -> tuple:
    """All eigenvalues (descending) and eigenvectors of a symmetric matrix."""
    c = _dense(matrix)
    try:
        values, vectors = scipy.linalg.eigh(c, driver="ev")
    except np.linalg.LinAlgError as e:
        raise EigenSolverError(f"Symmetric eigensolver did not converge: {e}") from e
    return values[::-1], vectors[:, ::-1]


def fix_sign(pair: Eigenpair, reference: Optional[np.ndarray] = None) -> Eigenpair:
    """
    Deterministic sign: closest to ``reference`` when given, otherwise the
    largest-magnitude component (lowest index on ties) is made positive.
    """
    u = pair.vector
    if reference is not None:
        flip = np.linalg.norm(u - reference) > np.linalg.norm(u + reference)
    else:
        flip = u[int(np.argmax(np.abs(u)))] < 0
    return replace(pair, vector=-u) if flip else pair
