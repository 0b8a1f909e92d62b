"""Small dense linear algebra and deterministic random streams.

Matrices are plain float64 ``numpy`` arrays. Random draws come from Philox,
a counter-based bit generator keyed by ``(seed, stream_id, *path)``, so every
consumer (data, init, partition, ...) owns an independent stream that does not
depend on the order or thread in which other streams are used.

``spectral_norm`` is the operator norm used for Gram drift summaries; condition
numbers come from the full ``eigh_symmetric`` spectrum instead.
"""

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import cho_solve
from scipy.linalg import lapack

from ..core import constants as const
from ..core.errors import (
    ConsistencyError,
    DimensionError,
    NotPositiveDefiniteError,
    ParameterError,
    ShapeError,
)

logger = logging.getLogger(__name__)

DenseMatrix = NDArray[np.float64]


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by (seed, stream_id, path)."""

    seed: int
    stream_id: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0 or any(p < 0 for p in self.path):
            raise ParameterError(
                f"RngStream keys must be non-negative, got seed={self.seed}, "
                f"stream_id={self.stream_id}, path={self.path}",
                source="numerics",
            )

    def child(self, index: int) -> "RngStream":
        """Derive an independent sub-stream."""
        return RngStream(self.seed, self.stream_id, (*self.path, index))

    def generator(self) -> np.random.Generator:
        """A fresh generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        return np.random.Generator(np.random.Philox(seq))


def as_matrix(values, *, name: str = "matrix") -> DenseMatrix:
    """Convert to a finite 2-D float64 array."""
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionError(
            f"{name} must be 2-D, got shape {matrix.shape}", source="numerics"
        )
    if not np.all(np.isfinite(matrix)):
        raise ShapeError(f"{name} contains NaN or Inf entries", source="numerics")
    return matrix


def frobenius_norm(matrix: DenseMatrix) -> float:
    return float(np.linalg.norm(np.asarray(matrix, dtype=np.float64), ord="fro"))


def _check_square(matrix: DenseMatrix, name: str) -> None:
    if matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(
            f"{name} must be square, got shape {matrix.shape}", source="numerics"
        )


def _check_symmetric(matrix: DenseMatrix, name: str) -> None:
    scale = frobenius_norm(matrix)
    asymmetry = frobenius_norm(matrix - matrix.T)
    if asymmetry > const.SYMMETRY_TOLERANCE * scale:
        raise ShapeError(
            f"{name} is not symmetric: ||A - A^T||_F = {asymmetry:.3e} "
            f"exceeds {const.SYMMETRY_TOLERANCE:g} * ||A||_F",
            source="numerics",
        )


def _rotate(a: DenseMatrix, v: DenseMatrix, p: int, q: int) -> None:
    """Apply the Jacobi rotation that zeroes a[p, q], in place."""
    apq = a[p, q]
    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c

    col_p = a[:, p].copy()
    col_q = a[:, q].copy()
    a[:, p] = c * col_p - s * col_q
    a[:, q] = s * col_p + c * col_q

    row_p = a[p, :].copy()
    row_q = a[q, :].copy()
    a[p, :] = c * row_p - s * row_q
    a[q, :] = s * row_p + c * row_q
    a[p, q] = 0.0
    a[q, p] = 0.0

    vec_p = v[:, p].copy()
    vec_q = v[:, q].copy()
    v[:, p] = c * vec_p - s * vec_q
    v[:, q] = s * vec_p + c * vec_q


def eigh_symmetric(matrix) -> tuple[NDArray[np.float64], DenseMatrix]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns the eigenvalues in ascending order and the matching orthonormal
    eigenvectors as columns.
    """
    a = as_matrix(matrix, name="eigh_symmetric input")
    _check_square(a, "eigh_symmetric input")
    _check_symmetric(a, "eigh_symmetric input")

    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = frobenius_norm(a)
    if scale == 0.0:
        return np.zeros(n), v

    # Rounding leaves O(n * eps) off-diagonal mass, so the stop scales with n
    threshold = const.JACOBI_OFF_DIAGONAL_TOLERANCE * scale * n
    skip = threshold / n
    for sweep in range(const.JACOBI_MAX_SWEEPS):
        off_diagonal = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off_diagonal <= threshold:
            logger.debug(f"Jacobi converged after {sweep} sweeps (n={n})")
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) > skip:
                    _rotate(a, v, p, q)
    else:
        logger.warning(
            f"Jacobi reached {const.JACOBI_MAX_SWEEPS} sweeps without full convergence"
        )

    eigenvalues = np.diag(a).copy()
    order = np.argsort(eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    eigenvectors = v[:, order]

    original = 0.5 * (as_matrix(matrix) + as_matrix(matrix).T)
    residual = np.max(np.abs(original @ eigenvectors - eigenvectors * eigenvalues))
    if residual > const.EIGEN_RESIDUAL_TOLERANCE * scale:
        raise ConsistencyError(
            f"Jacobi residual {residual:.3e} exceeds tolerance", source="numerics"
        )
    return eigenvalues, eigenvectors


def solve_spd(matrix, rhs) -> NDArray[np.float64]:
    """Solve A x = b for symmetric positive-definite A via Cholesky."""
    a = as_matrix(matrix, name="solve_spd matrix")
    _check_square(a, "solve_spd matrix")
    _check_symmetric(a, "solve_spd matrix")
    b = np.asarray(rhs, dtype=np.float64)
    if b.shape != (a.shape[0],):
        raise DimensionError(
            f"right-hand side shape {b.shape} does not match matrix {a.shape}",
            source="numerics",
        )

    factor, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        index = int(info) - 1
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite: non-positive pivot at index {index}",
            index=index,
            source="numerics",
        )
    if info < 0:
        raise ParameterError(
            f"dpotrf rejected argument {-info}", source="numerics"
        )

    x = cho_solve((factor, True), b)
    b_norm = float(np.linalg.norm(b))
    for _ in range(const.SOLVE_MAX_REFINEMENTS):
        residual = b - a @ x
        if np.linalg.norm(residual) <= const.SOLVE_RESIDUAL_TOLERANCE * b_norm:
            break
        x = x + cho_solve((factor, True), residual)
    else:
        final = float(np.linalg.norm(b - a @ x))
        if final > const.SOLVE_RESIDUAL_TOLERANCE * b_norm:
            logger.warning(
                f"solve_spd residual {final:.3e} above tolerance after refinement"
            )
    return x


def spectral_norm(matrix) -> float:
    """Largest singular value by power iteration on A^T A."""
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise DimensionError(
            f"spectral_norm needs a non-empty matrix, got shape {a.shape}",
            source="numerics",
        )
    if not np.any(a):
        return 0.0

    # Fixed stream: the start vector is identical on every call
    start = RngStream(0, const.STREAM_SPECTRAL_START).generator()
    v = start.standard_normal(a.shape[1])
    v /= np.linalg.norm(v)

    estimate = 0.0
    for _ in range(const.POWER_ITERATION_MAX_STEPS):
        av = a @ v
        w = a.T @ av
        w_norm = np.linalg.norm(w)
        if w_norm == 0.0:
            # Start vector fell in the null space of A^T A
            break
        v = w / w_norm
        new_estimate = float(np.linalg.norm(a @ v))
        if abs(new_estimate - estimate) <= const.POWER_ITERATION_TOLERANCE * new_estimate:
            estimate = new_estimate
            break
        estimate = new_estimate
    return estimate


def gaussian_matrix(rng: RngStream, rows: int, cols: int, sigma: float) -> DenseMatrix:
    """A rows x cols matrix with i.i.d. N(0, sigma^2) entries drawn from ``rng``."""
    if sigma < 0:
        raise ParameterError(f"sigma must be non-negative, got {sigma}", source="numerics")
    if rows < 0 or cols < 0:
        raise DimensionError(
            f"matrix dimensions must be non-negative, got {rows}x{cols}",
            source="numerics",
        )
    if sigma == 0:
        return np.zeros((rows, cols))
    return sigma * rng.generator().standard_normal((rows, cols))
