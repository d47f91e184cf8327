"""Kernels shared by both detectors: reweighting, group shrinkage and
Hermitian positive-definite solves with a reusable Cholesky factor.

Vectorization stacks columns (Fortran order), so ``vec(A Z B) = (B.T kron A) vec(Z)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import blas, lapack


@dataclass(frozen=True)
class AdmmConfig:
    beta: float = 1e-5
    rho: float = 0.1
    eps0: float = 0.1
    outer_iterations: int = 10
    inner_iterations: int = 10
    activity_threshold: float = 0.5

    def __post_init__(self):
        for name in ("beta", "rho", "eps0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)!r}")
        for name in ("outer_iterations", "inner_iterations"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {v!r}")
        if not self.activity_threshold >= 0:
            raise ValueError(f"activity_threshold must be >= 0, got {self.activity_threshold!r}")


def vec(a: np.ndarray) -> np.ndarray:
    return np.ravel(a, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.reshape(v, (rows, cols), order="F")


class HpdFactorization:
    """Lower Cholesky factor of a Hermitian positive-definite matrix.

    The assembled matrix is kept alongside the factor so callers can check
    residuals. Instances are never mutated after construction.
    """

    def __init__(self, matrix: np.ndarray, structure: str = "plain"):
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {matrix.shape}")
        factor, info = lapack.zpotrf(matrix, lower=1, clean=1)
        if info != 0:
            raise np.linalg.LinAlgError(
                f"{structure} system is not positive definite (potrf info={info})")
        self.matrix = matrix
        self.structure = structure
        self._factor = np.asfortranarray(factor)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def lower(self) -> np.ndarray:
        return self._factor

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Forward and back substitution against the stored factor."""
        b = np.asarray(b, dtype=complex)
        if b.shape[0] != self.dimension:
            raise ValueError(f"right-hand side has {b.shape[0]} rows, expected {self.dimension}")
        if b.ndim == 1:
            # trsv pair is several times faster than potrs for a single vector
            y = blas.ztrsv(self._factor, b, lower=1)
            return blas.ztrsv(self._factor, y, lower=1, trans=2)
        x, info = lapack.zpotrs(self._factor, b, lower=1)
        if info != 0:
            raise ValueError(f"potrs failed with info={info}")
        return x

    def inverse(self) -> np.ndarray:
        """Explicit inverse, for small systems applied many times by matmul."""
        return self.solve(np.eye(self.dimension, dtype=complex))

    def residual(self, x: np.ndarray, b: np.ndarray) -> float:
        """Relative residual ``||A x - b|| / ||b||``."""
        nb = np.linalg.norm(b)
        return float(np.linalg.norm(self.matrix @ x - b) / (nb if nb > 0 else 1.0))


def reweight(row_norms, eps0: float) -> np.ndarray:
    """Majorization-minimization weights ``1 / (eps0 + ||row||)``."""
    if not eps0 > 0:
        raise ValueError(f"eps0 must be > 0, got {eps0}")
    return 1.0 / (eps0 + np.asarray(row_norms, dtype=float))


def shrink_scalar(d, threshold):
    """Complex soft threshold ``d/|d| * max(0, |d| - t)``, elementwise, 0 at ``d = 0``."""
    d = np.asarray(d, dtype=complex)
    threshold = np.asarray(threshold, dtype=float)
    if np.any(threshold < 0):
        raise ValueError("threshold must be >= 0")
    out = shrink_scalar_unchecked(d, threshold)
    return out[()] if out.ndim == 0 else out


def shrink_row(d, threshold):
    """Group soft threshold on the last axis.

    ``d`` may be a single vector or a matrix whose rows are shrunk
    independently, with ``threshold`` scalar or one value per row.
    """
    d = np.asarray(d, dtype=complex)
    threshold = np.asarray(threshold, dtype=float)
    if np.any(threshold < 0):
        raise ValueError("threshold must be >= 0")
    return shrink_rows_unchecked(d, threshold)


def _scale(mag, threshold):
    # max(0, |d| - t) / |d|, with 0 at |d| = 0 since t >= 0
    return np.maximum(mag - threshold, 0.0) / np.where(mag > 0, mag, 1.0)


def shrink_scalar_unchecked(d: np.ndarray, threshold: np.ndarray) -> np.ndarray:
    """:func:`shrink_scalar` without argument checks, for solver inner loops."""
    return _scale(np.abs(d), threshold) * d


def shrink_rows_unchecked(d: np.ndarray, threshold: np.ndarray) -> np.ndarray:
    """:func:`shrink_row` without argument checks, for solver inner loops."""
    if d.dtype == np.complex128 and d.flags.c_contiguous:
        # interleaved (re, im) view: one dot product per row
        dv = d.view(np.float64)
        norm = np.sqrt(np.einsum("...i,...i->...", dv, dv))
    else:
        norm = np.linalg.norm(d, axis=-1)
    return _scale(norm, threshold)[..., None] * d


def assemble_kron_system(h_hat: np.ndarray, pilots: np.ndarray, rho: float) -> np.ndarray:
    """``conj(H H^H) kron (Phi^H Phi) + rho I``, the matrix acting on ``vec(Z)``.

    ``Phi^H Phi Z H H^H + rho Z`` vectorizes (column-stacked) to this matrix
    times ``vec(Z)``; ``conj(H H^H)`` equals ``(H H^H)^T`` because the Gram
    matrix is Hermitian.
    """
    if not rho > 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    gram_h = h_hat @ h_hat.conj().T
    gram_p = pilots.conj().T @ pilots
    n = gram_p.shape[0]
    a = np.kron(gram_h.conj(), gram_p)
    a[np.diag_indices(n * n)] += rho
    return a


def assemble_and_factor_kron(h_hat: np.ndarray, pilots: np.ndarray, rho: float) -> HpdFactorization:
    if h_hat.shape[0] != pilots.shape[1]:
        raise ValueError(f"H_hat has {h_hat.shape[0]} rows but Phi has {pilots.shape[1]} columns")
    return HpdFactorization(assemble_kron_system(h_hat, pilots, rho), "kronecker")


def factor_plain(pilots: np.ndarray, rho: float) -> HpdFactorization:
    """Factor ``Phi^H Phi + rho I``."""
    if not rho > 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    a = pilots.conj().T @ pilots
    a[np.diag_indices(a.shape[0])] += rho
    return HpdFactorization(a, "plain")
