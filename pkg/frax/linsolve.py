"""
Sparse linear solvers.

The condensed flow system is symmetric positive definite and goes through
``cholesky_solve`` (or ``cg_solve``); the transport system is a
non-symmetric M-matrix and goes through ``lu_solve``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np
import scipy.sparse as sps
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu

from .exceptions import NoConvergence, NotSPD, Singular

try:
    from sksparse import cholmod  # Sparse cholesky solver (CHOLMOD)

    _has_cholmod = True
except ImportError:
    _has_cholmod = False

logger = logging.getLogger(__name__)

SparseMatrix = sps.csr_matrix

DIRECT_RESIDUAL = 1e-10


@dataclass
class SolveReport:
    """Method, iteration count, relative residual and wall time of a solve."""

    method: str
    iterations: int
    residual: float
    wall_time: float


def assemble_csr(
    rows: Any, cols: Any, values: Any, shape: tuple
) -> SparseMatrix:
    """CSR matrix from COO triplets; duplicate entries are summed."""
    matrix = sps.coo_matrix(
        (np.asarray(values, dtype=float).ravel(), (np.asarray(rows).ravel(), np.asarray(cols).ravel())),
        shape=shape,
    ).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


def is_symmetric(matrix: Any, rtol: float = 1e-12) -> bool:
    """Whether the matrix equals its transpose up to ``rtol`` times its largest entry."""
    diff = abs(matrix - matrix.T)
    scale = abs(matrix).max() if matrix.nnz else 0.0
    return diff.nnz == 0 or diff.max() <= rtol * max(scale, 1.0)


def _relative_residual(matrix: Any, x: np.ndarray, b: np.ndarray) -> float:
    """||b - Mx|| / ||b||, or ||Mx|| when b is zero."""
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return float(np.linalg.norm(matrix @ x))
    return float(np.linalg.norm(b - matrix @ x) / norm_b)


class SparseCholesky:
    """Factor an SPD matrix once, solve for many right-hand sides.

    Uses CHOLMOD when scikit-sparse is installed. Otherwise the matrix is
    permuted (reverse Cuthill-McKee, or SuperLU's minimum degree for
    ``ordering="amd"``) and factored by SuperLU in symmetric mode without
    pivoting; for an SPD matrix the pivots are the positive entries of D in
    L D L^T, so a non-positive pivot means the matrix is not SPD.
    """

    def __init__(self, matrix: Any, ordering: str = "rcm"):
        if ordering not in ("rcm", "amd"):
            raise ValueError(f"unknown ordering {ordering!r}")
        self.matrix = sps.csr_matrix(matrix)
        self.ordering = ordering
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n):
            raise NotSPD("matrix is not square")
        if not is_symmetric(self.matrix):
            raise NotSPD("matrix is not symmetric")
        if np.any(self.matrix.diagonal() <= 0):
            raise NotSPD("matrix has a non-positive diagonal entry")
        self._factor: Optional[Callable[[np.ndarray], np.ndarray]] = None
        self.method = ""
        self._factorize()

    def _factorize(self) -> None:
        """CHOLMOD when importable, else ordered SuperLU with checked pivots."""
        if _has_cholmod:
            try:
                factor = cholmod.cholesky(self.matrix.tocsc())
            except cholmod.CholmodNotPositiveDefiniteError as exc:
                raise NotSPD(str(exc)) from exc
            self._factor = factor
            self.method = "cholmod"
            return

        if self.ordering == "rcm":
            perm = reverse_cuthill_mckee(self.matrix, symmetric_mode=True)
            permc_spec = "NATURAL"
        else:
            perm = np.arange(self.matrix.shape[0])
            permc_spec = "MMD_AT_PLUS_A"
        permuted = self.matrix[perm][:, perm].tocsc()
        try:
            lu = splu(
                permuted,
                permc_spec=permc_spec,
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise NotSPD(str(exc)) from exc
        pivots = lu.U.diagonal()
        if np.any(pivots <= 0) or not np.all(np.isfinite(pivots)):
            raise NotSPD(f"non-positive pivot in factorization ({pivots.min():.3e})")
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))

        def solve(rhs: np.ndarray) -> np.ndarray:
            return lu.solve(rhs[perm])[inverse]

        self._factor = solve
        self.method = f"superlu-{self.ordering}"

    def solve(self, rhs: Any) -> np.ndarray:
        assert self._factor is not None
        return np.asarray(self._factor(np.asarray(rhs, dtype=float)))


class SparseLU:
    """SuperLU factorization of a general sparse matrix."""

    def __init__(self, matrix: Any):
        self.matrix = sps.csc_matrix(matrix)
        try:
            self._lu = splu(self.matrix)
        except RuntimeError as exc:
            raise Singular(str(exc)) from exc
        pivots = self._lu.U.diagonal()
        if np.any(pivots == 0) or not np.all(np.isfinite(pivots)):
            raise Singular("zero pivot in LU factorization")

    def solve(self, rhs: Any) -> np.ndarray:
        return self._lu.solve(np.asarray(rhs, dtype=float))


def cholesky_solve(matrix: Any, b: Any, ordering: str = "rcm") -> tuple:
    """Solve an SPD system with a sparse Cholesky-type factorization.

    Returns ``(x, report)``.
    """
    start = time.perf_counter()
    b = np.asarray(b, dtype=float)
    factor = SparseCholesky(matrix, ordering)
    if not np.any(b):
        return np.zeros_like(b), SolveReport(factor.method, 0, 0.0, time.perf_counter() - start)
    x = factor.solve(b)
    residual = _relative_residual(factor.matrix, x, b)
    iterations = 1
    if residual > DIRECT_RESIDUAL:
        # One step of iterative refinement.
        x = x + factor.solve(b - factor.matrix @ x)
        residual = _relative_residual(factor.matrix, x, b)
        iterations = 2
        if residual > DIRECT_RESIDUAL:
            logger.warning("direct solve residual %.3e above %.0e", residual, DIRECT_RESIDUAL)
    report = SolveReport(factor.method, iterations, residual, time.perf_counter() - start)
    logger.info(
        "%s: n=%d nnz=%d residual=%.3e time=%.3fs",
        report.method,
        matrix.shape[0],
        factor.matrix.nnz,
        report.residual,
        report.wall_time,
    )
    return x, report


def cg_solve(
    matrix: Any,
    b: Any,
    tol: float = 1e-10,
    max_iter: Optional[int] = None,
    preconditioner: Optional[str] = "jacobi",
    x0: Optional[np.ndarray] = None,
) -> tuple:
    """Preconditioned conjugate gradients; stops at ``||r|| <= tol * ||b||``.

    Returns ``(x, report)``.
    """
    start = time.perf_counter()
    matrix = sps.csr_matrix(matrix)
    b = np.asarray(b, dtype=float)
    n = len(b)
    max_iter = 10 * n if max_iter is None else max_iter
    if preconditioner in (None, "none"):
        inv_diag = np.ones(n)
    elif preconditioner == "jacobi":
        diag = matrix.diagonal()
        if np.any(diag <= 0):
            raise NotSPD("matrix has a non-positive diagonal entry")
        inv_diag = 1.0 / diag
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")

    norm_b = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if norm_b == 0.0:
        return np.zeros(n), SolveReport("cg", 0, 0.0, time.perf_counter() - start)
    r = b - matrix @ x
    z = inv_diag * r
    d = z.copy()
    rz = r @ z
    k = 0
    residual = np.linalg.norm(r) / norm_b
    while residual > tol:
        if k >= max_iter:
            raise NoConvergence(max_iter, residual)
        ad = matrix @ d
        curvature = d @ ad
        if curvature <= 0:
            raise NotSPD("non-positive curvature in conjugate gradients")
        alpha = rz / curvature
        x += alpha * d
        r -= alpha * ad
        z = inv_diag * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
        k += 1
        residual = np.linalg.norm(r) / norm_b
    report = SolveReport("cg", k, float(residual), time.perf_counter() - start)
    logger.info(
        "cg (%s): n=%d iterations=%d residual=%.3e time=%.3fs",
        preconditioner or "none",
        n,
        k,
        report.residual,
        report.wall_time,
    )
    return x, report


def lu_solve(matrix: Any, b: Any) -> tuple:
    """Solve a general sparse system with SuperLU. Returns ``(x, report)``.

    Same residual contract as :func:`cholesky_solve`: one refinement step
    when the relative residual exceeds ``DIRECT_RESIDUAL``, then a warning.
    """
    start = time.perf_counter()
    factor = SparseLU(matrix)
    b = np.asarray(b, dtype=float)
    x = factor.solve(b)
    residual = _relative_residual(factor.matrix, x, b)
    iterations = 1
    if residual > DIRECT_RESIDUAL:
        x = x + factor.solve(b - factor.matrix @ x)
        residual = _relative_residual(factor.matrix, x, b)
        iterations = 2
        if residual > DIRECT_RESIDUAL:
            logger.warning("LU solve residual %.3e above %.0e", residual, DIRECT_RESIDUAL)
    return x, SolveReport("superlu", iterations, residual, time.perf_counter() - start)
