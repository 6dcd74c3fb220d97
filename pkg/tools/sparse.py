"""Triplet assembly into CSR storage and Jacobi-preconditioned Krylov solves."""

import logging
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, bicgstab, cg, gmres

logger = logging.getLogger(__name__)

SparseMatrix = sp.csr_matrix
Triplets = Union[Iterable[Tuple[int, int, float]], Tuple[np.ndarray, np.ndarray, np.ndarray]]


class LinearSolverError(RuntimeError):
    """Raised when a Krylov solve fails; carries the final relative residual."""

    def __init__(self, message: str, residual: float, iterations: Optional[int] = None):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


def _triplet_arrays(triplets: Triplets):
    if isinstance(triplets, tuple) and len(triplets) == 3 and isinstance(triplets[0], np.ndarray):
        rows, cols, vals = triplets
    else:
        items = list(triplets)
        if not items:
            return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, float)
        rows, cols, vals = zip(*items)
    return (np.asarray(rows, dtype=np.int64).ravel(), np.asarray(cols, dtype=np.int64).ravel(),
            np.asarray(vals, dtype=float).ravel())


def from_triplets(n: int, m: int, triplets: Triplets) -> sp.csr_matrix:
    """Assemble an ``n × m`` CSR matrix, summing duplicate entries.

    Entries are sorted by (row, column, value) before the duplicate sums, so
    the stored matrix does not depend on the order of the triplets.
    """
    rows, cols, vals = _triplet_arrays(triplets)
    if not (len(rows) == len(cols) == len(vals)):
        raise ValueError("triplet arrays differ in length")
    if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= m):
        raise IndexError(f"triplet index out of range for a {n}×{m} matrix")

    order = np.lexsort((vals, cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if rows.size:
        starts = np.flatnonzero(np.r_[True, (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])])
        sums = np.add.reduceat(vals, starts)
        rows, cols = rows[starts], cols[starts]
    else:
        sums = vals
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return sp.csr_matrix((sums, cols, np.cumsum(indptr)), shape=(n, m))


def jacobi_preconditioner(A: sp.spmatrix) -> LinearOperator:
    diag = A.diagonal()
    eps = np.finfo(float).eps * 100
    safe = np.where(np.abs(diag) < eps * max(np.abs(diag).max(initial=0.0), 1.0), 1.0, diag)
    inverse = 1.0 / safe
    return LinearOperator(A.shape, matvec=lambda x: inverse * np.ravel(x), dtype=float)


def symmetry_defect(A: sp.spmatrix) -> float:
    """max|A − Aᵀ| relative to max|A| (0 for the zero matrix)."""
    scale = abs(A).max() if A.nnz else 0.0
    if scale == 0.0:
        return 0.0
    return abs(A - A.T).max() / scale


def _prepare(A, b, x0):
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"shape mismatch: matrix {A.shape}, rhs {b.shape}")
    if not np.all(np.isfinite(b)):
        raise LinearSolverError("non-finite right-hand side", residual=float("nan"))
    scale = np.linalg.norm(b)
    guess = None if x0 is None or scale == 0.0 else np.asarray(x0, dtype=float) / scale
    return b, scale, guess


def _finish(A, b, x, scale, tol, info, name):
    if not np.all(np.isfinite(x)):
        raise LinearSolverError(f"{name} produced non-finite iterate", residual=float("nan"))
    x = x * scale
    residual = float(np.linalg.norm(A @ x - b) / scale)
    if info != 0:
        raise LinearSolverError(f"{name} did not converge (info={info})", residual=residual, iterations=info)
    logger.debug(f"{name}: n={A.shape[0]} relative residual {residual:.3e} (tol {tol:.1e})")
    return x


def cg_solve(A: sp.spmatrix, b: Sequence[float], tol: float = 1e-10, maxit: Optional[int] = None,
             x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Jacobi-preconditioned CG for symmetric positive definite ``A``."""
    b, scale, guess = _prepare(A, b, x0)
    if scale == 0.0:
        return np.zeros_like(b)
    maxit = maxit or max(1000, 10 * A.shape[0])
    x, info = cg(A, b / scale, x0=guess, rtol=tol, atol=0.0, maxiter=maxit, M=jacobi_preconditioner(A))
    return _finish(A, b, x, scale, tol, info, "cg")


def bicgstab_solve(A: sp.spmatrix, b: Sequence[float], tol: float = 1e-10, maxit: Optional[int] = None,
                   x0: Optional[np.ndarray] = None) -> np.ndarray:
    """Jacobi-preconditioned BiCGSTAB for general square ``A``.

    A breakdown of BiCGSTAB is retried once with restarted GMRES from the
    last iterate.
    """
    b, scale, guess = _prepare(A, b, x0)
    if scale == 0.0:
        return np.zeros_like(b)
    maxit = maxit or max(1000, 10 * A.shape[0])
    M = jacobi_preconditioner(A)
    x, info = bicgstab(A, b / scale, x0=guess, rtol=tol, atol=0.0, maxiter=maxit, M=M)
    if info != 0 and np.all(np.isfinite(x)):
        logger.warning(f"bicgstab stopped with info={info}; retrying with gmres")
        x, info = gmres(A, b / scale, x0=x, rtol=tol, atol=0.0, restart=min(200, A.shape[0]),
                        maxiter=maxit, M=M)
    return _finish(A, b, x, scale, tol, info, "bicgstab")
