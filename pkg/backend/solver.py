"""
Sparse symmetric systems and a Jacobi-preconditioned conjugate gradient solver.
Shared by matting and blending.

Reductions use numpy's own summation instead of BLAS dot products so the
summation order does not depend on the BLAS threading setup.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from errors import AsymmetricMatrix, NonConvergence, ZeroDiagonal

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Finalized CSR matrix: symmetric, sorted columns, no stored zeros"""
    csr: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.csr.shape[0]

    @property
    def indptr(self) -> np.ndarray:
        return self.csr.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.csr.indices

    @property
    def values(self) -> np.ndarray:
        return self.csr.data

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.csr @ x

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    @classmethod
    def assemble(cls, n: int, rows: np.ndarray, cols: np.ndarray, values: np.ndarray,
                 symmetrize: bool = True) -> 'SparseMatrix':
        """Sum duplicate triplets, then finalize"""
        coo = sp.coo_matrix((np.asarray(values, dtype=np.float64), (rows, cols)), shape=(n, n))
        return cls.finalize(coo.tocsr(), symmetrize=symmetrize)

    @classmethod
    def finalize(cls, matrix, symmetrize: bool = True) -> 'SparseMatrix':
        csr = sp.csr_matrix(matrix, dtype=np.float64)
        if symmetrize:
            # a_ij + a_ji is commutative, so the result is exactly symmetric
            csr = ((csr + csr.T) * 0.5).tocsr()
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        asym = asymmetry(csr)
        if asym != 0.0:
            raise AsymmetricMatrix(f"Matrix is not symmetric (max |A - A^T| = {asym:g})")
        return cls(csr)


@dataclass(frozen=True, eq=False)
class SparseSystem:
    matrix: SparseMatrix
    rhs: np.ndarray  # (n, channels)

    def __post_init__(self):
        rhs = np.asarray(self.rhs, dtype=np.float64)
        if rhs.ndim == 1:
            rhs = rhs[:, None]
        if rhs.shape[0] != self.matrix.n:
            raise ValueError(f"rhs has {rhs.shape[0]} rows for a {self.matrix.n}x{self.matrix.n} matrix")
        object.__setattr__(self, 'rhs', rhs)

    @property
    def channels(self) -> int:
        return self.rhs.shape[1]


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    residual: float  # ||Ax - b|| / ||b||, recomputed from the returned x
    converged: bool

    def to_dict(self):
        return {'iterations': self.iterations, 'residual': self.residual, 'converged': self.converged}


def asymmetry(matrix) -> float:
    diff = (matrix - matrix.T).tocsr()
    if diff.nnz == 0:
        return 0.0
    return float(np.abs(diff.data).max())


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(a * b))


def _norm(a: np.ndarray) -> float:
    return math.sqrt(_dot(a, a))


def relative_residual(matrix: SparseMatrix, x: np.ndarray, b: np.ndarray) -> float:
    b_norm = _norm(b)
    r_norm = _norm(b - matrix.matvec(x))
    return r_norm / b_norm if b_norm > 0.0 else r_norm


def _pcg(matrix: SparseMatrix, inv_diag: np.ndarray, b: np.ndarray, tol: float,
         max_iter: int) -> Tuple[np.ndarray, SolveReport]:
    n = matrix.n
    x = np.zeros(n)
    b_norm = _norm(b)
    if b_norm == 0.0:
        return x, SolveReport(0, 0.0, True)

    r = b.copy()
    z = r * inv_diag
    p = z.copy()
    rz = _dot(r, z)
    iterations = 0
    converged = False

    while iterations < max_iter:
        Ap = matrix.matvec(p)
        curvature = _dot(p, Ap)
        if curvature <= 0.0:
            logger.debug(f"CG breakdown at iteration {iterations} (p^T A p = {curvature:g})")
            break
        step = rz / curvature
        x += step * p
        r -= step * Ap
        iterations += 1

        if _norm(r) <= tol * b_norm:
            # the recursive residual drifts; confirm with the true one
            true_r = b - matrix.matvec(x)
            if _norm(true_r) <= tol * b_norm:
                converged = True
                break
            r = true_r
            z = r * inv_diag
            p = z.copy()
            rz = _dot(r, z)
            continue

        z = r * inv_diag
        rz_next = _dot(r, z)
        p = z + (rz_next / rz) * p
        rz = rz_next

    residual = relative_residual(matrix, x, b)
    return x, SolveReport(iterations, residual, converged or residual <= tol)


def cg_solve(system: SparseSystem, tol: float = DEFAULT_TOL,
             max_iter: Optional[int] = None) -> Tuple[np.ndarray, List[SolveReport]]:
    """Solve A x = b for every rhs column.

    Returns the (n, channels) solution and one report per column; raises
    NonConvergence when a column misses `tol` within `max_iter` iterations.
    """
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    matrix = system.matrix
    n = matrix.n
    if max_iter is None:
        max_iter = 10 * n

    diag = matrix.diagonal()
    if n and not (diag > 0.0).all():
        bad = int(np.argmin(diag))
        raise ZeroDiagonal(f"Jacobi preconditioner undefined: diagonal entry {bad} is {diag[bad]:g}")
    inv_diag = 1.0 / diag

    solution = np.zeros((n, system.channels))
    reports = []
    for c in range(system.channels):
        x, report = _pcg(matrix, inv_diag, system.rhs[:, c], tol, max_iter)
        logger.debug(f"CG channel {c}: n={n} iterations={report.iterations} residual={report.residual:.3e}")
        if not report.converged:
            raise NonConvergence(f"CG did not reach tol {tol:g} in {max_iter} iterations "
                                 f"(channel {c}, residual {report.residual:.3e})",
                                 residual=report.residual, iterations=report.iterations)
        solution[:, c] = x
        reports.append(report)
    return solution, reports


def reduce_system(matrix: SparseMatrix, unknown: np.ndarray, known_values: np.ndarray,
                  extra_rhs: Optional[np.ndarray] = None) -> SparseSystem:
    """Eliminate constrained entries: A_UU x = extra - A_UK v_K.

    `unknown` is a boolean vector over the full index space; `known_values`
    holds (n, channels) values whose unknown rows are ignored.
    """
    unknown = np.asarray(unknown, dtype=bool)
    u_idx = np.nonzero(unknown)[0]
    k_idx = np.nonzero(~unknown)[0]
    csr = matrix.csr
    a_uu = csr[u_idx][:, u_idx]
    a_uk = csr[u_idx][:, k_idx]

    known = np.asarray(known_values, dtype=np.float64)
    if known.ndim == 1:
        known = known[:, None]
    rhs = -(a_uk @ known[k_idx])
    if extra_rhs is not None:
        rhs = rhs + np.asarray(extra_rhs, dtype=np.float64).reshape(len(u_idx), -1)
    return SparseSystem(SparseMatrix.finalize(a_uu, symmetrize=False), rhs)

