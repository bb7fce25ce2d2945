"""Dense symmetric-matrix kernels: symmetric PSD square roots and SPD solves.

Matrices are plain ``numpy`` arrays. Everything here is small (p is the
parameter dimension), so the routines favour exactness over speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gbcalib.errors import DimensionMismatch, NotPsd

DEFAULT_TOL = 1e-12


def as_sym(m) -> np.ndarray:
    """Return ``m`` as a float square matrix, symmetrized by averaging.

    Scalars and length-1 vectors are promoted to 1x1 matrices.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionMismatch("matrix has non-finite entries")
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class SpdFactor:
    """Symmetric square root of a PSD matrix and its inverse.

    ``clamped`` records whether any eigenvalue had to be raised to the
    floor ``tol * lambda_max`` before rooting.
    """

    sqrt: np.ndarray
    inv_sqrt: np.ndarray
    log_det: float
    clamped: bool = False

    @property
    def dim(self) -> int:
        return self.sqrt.shape[0]

    def matrix(self) -> np.ndarray:
        """Reconstruct the (clamped) source matrix."""
        return self.sqrt @ self.sqrt

    def inverse(self) -> np.ndarray:
        return self.inv_sqrt @ self.inv_sqrt


def _eigh_checked(a: np.ndarray, tol: float):
    w, v = np.linalg.eigh(a)
    scale = float(np.max(np.abs(w)))
    if scale == 0.0:
        raise NotPsd("matrix is identically zero")
    if w[0] < -tol * scale:
        raise NotPsd(f"smallest eigenvalue {w[0]:.3e} below -tol*|lambda|_max = {-tol * scale:.3e}")
    return w, v, scale


def sym_sqrt(m, tol: float = DEFAULT_TOL) -> SpdFactor:
    """Symmetric square root via eigendecomposition, with an eigenvalue floor.

    Eigenvalues are clamped at ``max(lambda_i, tol * lambda_max)`` so nearly
    singular inputs still factor; a matrix with an eigenvalue below
    ``-tol * lambda_max`` raises :class:`NotPsd`.
    """
    a = as_sym(m)
    w, v, scale = _eigh_checked(a, tol)
    floor = tol * scale
    clamped = bool(np.any(w < floor))
    w = np.maximum(w, floor)
    root = np.sqrt(w)
    s = (v * root) @ v.T
    s_inv = (v / root) @ v.T
    return SpdFactor(
        sqrt=0.5 * (s + s.T),
        inv_sqrt=0.5 * (s_inv + s_inv.T),
        log_det=float(np.sum(np.log(w))),
        clamped=clamped,
    )


def solve_spd(m, rhs, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Solve ``m @ x = rhs`` for symmetric positive definite ``m``.

    ``rhs`` may be a vector or a matrix with ``dim`` rows. Singular or
    indefinite ``m`` (smallest eigenvalue at or below ``tol * lambda_max``)
    raises :class:`NotPsd`.
    """
    a = as_sym(m)
    b = np.asarray(rhs, dtype=float)
    if b.ndim == 0:
        b = b.reshape(1)
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, matrix has dim {a.shape[0]}")
    w, v, scale = _eigh_checked(a, tol)
    if w[0] <= tol * scale:
        raise NotPsd(f"matrix is singular to tolerance (min eigenvalue {w[0]:.3e})")
    coef = v.T @ b
    if b.ndim == 1:
        return v @ (coef / w)
    return v @ (coef / w[:, None])


def inv_spd(m, tol: float = DEFAULT_TOL) -> np.ndarray:
    a = as_sym(m)
    x = solve_spd(a, np.eye(a.shape[0]), tol)
    return 0.5 * (x + x.T)


def rel_frobenius(a, b) -> float:
    """``||a - b||_F / ||b||_F`` (absolute error when ``b`` is zero)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.linalg.norm(b)
    err = np.linalg.norm(a - b)
    return float(err / denom) if denom > 0 else float(err)
