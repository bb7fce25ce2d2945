"""Location-scale calibration of generalized posterior draws.

Posterior draws at any learning rate are centred on their own mean, rotated
and rescaled by ``Omega = V^{1/2} H0^{1/2}`` and shifted to an admissible
center. ``V`` is the plug-in sandwich covariance and ``H0^{-1}`` is ``s_n``
times the posterior sample covariance, so the calibrated draws have the
sandwich covariance whatever the learning rate was.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gbcalib.errors import BadLevel, DimensionMismatch, EmptyDraws
from gbcalib.linalg import as_sym, rel_frobenius, solve_spd, sym_sqrt
from gbcalib.model import HuberSpec, WhitenedDataset, hessian, k_hat
from gbcalib.penalty import RidgeSpec, rho_hess
from gbcalib.sampler import DrawMatrix


def _as_draws(draws) -> np.ndarray:
    arr = draws.draws if isinstance(draws, DrawMatrix) else np.asarray(draws, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] < 1:
        raise EmptyDraws("no draws")
    return arr


@dataclass(frozen=True)
class SandwichEstimates:
    j_lambda_hat: np.ndarray
    k_hat: np.ndarray
    v_target_hat: np.ndarray
    h0_inv_hat: np.ndarray
    center: np.ndarray
    h0_clamped: bool = False

    @property
    def p(self) -> int:
        return self.center.shape[0]


@dataclass(frozen=True)
class CalibratedDraws:
    draws: np.ndarray
    omega_hat: np.ndarray
    center: np.ndarray
    raw_mean: np.ndarray


def posterior_cov(draws) -> np.ndarray:
    """Sample covariance of the draws with divisor D."""
    arr = _as_draws(draws)
    if arr.shape[0] < 2:
        raise EmptyDraws("posterior covariance needs at least two draws")
    c = arr - arr.mean(axis=0)
    out = c.T @ c / arr.shape[0]
    return 0.5 * (out + out.T)


def sandwich_matrix(j_lambda, k) -> np.ndarray:
    """``J^-1 K J^-1`` through two SPD solves."""
    j = as_sym(j_lambda)
    k = as_sym(k)
    if j.shape != k.shape:
        raise DimensionMismatch("J and K must have the same shape")
    left = solve_spd(j, k)
    v = solve_spd(j, left.T).T
    return 0.5 * (v + v.T)


def target_sandwich(wd: WhitenedDataset, h: HuberSpec, spec: RidgeSpec, center) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Plug-in ``(J_lambda, K, V_target)`` at ``center``."""
    center = np.asarray(center, dtype=float).reshape(-1)
    j = hessian(wd, center, h) + spec.lam * rho_hess(spec)
    k = k_hat(wd, center, h)
    return j, k, sandwich_matrix(j, k)


def sandwich_from_parts(j_lambda, k, h0_inv, center) -> SandwichEstimates:
    j = as_sym(j_lambda)
    k = as_sym(k)
    h0_inv = as_sym(h0_inv)
    return SandwichEstimates(
        j_lambda_hat=j,
        k_hat=k,
        v_target_hat=sandwich_matrix(j, k),
        h0_inv_hat=h0_inv,
        center=np.asarray(center, dtype=float).reshape(-1),
        h0_clamped=sym_sqrt(h0_inv).clamped,
    )


def sandwich_at(
    wd: WhitenedDataset, h: HuberSpec, spec: RidgeSpec, center, s_n: int, draws
) -> SandwichEstimates:
    """Assemble the sandwich pieces at ``center`` and the working covariance from ``draws``."""
    j, k, v = target_sandwich(wd, h, spec, center)
    h0_inv = s_n * posterior_cov(draws)
    return SandwichEstimates(
        j_lambda_hat=j,
        k_hat=k,
        v_target_hat=v,
        h0_inv_hat=h0_inv,
        center=np.asarray(center, dtype=float).reshape(-1),
        h0_clamped=sym_sqrt(h0_inv).clamped,
    )


def build_omega(est: SandwichEstimates) -> np.ndarray:
    """``V^{1/2} (H0^{-1})^{-1/2}``."""
    return sym_sqrt(est.v_target_hat).sqrt @ sym_sqrt(est.h0_inv_hat).inv_sqrt


def identity_residual(est: SandwichEstimates, omega=None) -> float:
    """Relative Frobenius error of ``Omega H0^-1 Omega' = V``."""
    om = build_omega(est) if omega is None else np.asarray(omega)
    return rel_frobenius(om @ est.h0_inv_hat @ om.T, est.v_target_hat)


def calibrate_draws(draws, est: SandwichEstimates, omega=None) -> CalibratedDraws:
    arr = _as_draws(draws)
    if arr.shape[0] < 2:
        raise EmptyDraws("calibration needs at least two draws")
    if arr.shape[1] != est.p:
        raise DimensionMismatch(f"draws have p = {arr.shape[1]}, estimates have p = {est.p}")
    om = build_omega(est) if omega is None else np.asarray(omega, dtype=float)
    mean = arr.mean(axis=0)
    out = est.center + (arr - mean) @ om.T
    return CalibratedDraws(draws=out, omega_hat=om, center=est.center, raw_mean=mean)


def credible_interval(draws, coord: int = 0, level: float = 0.95) -> tuple[float, float]:
    """Equal-tailed interval from order statistics with linear interpolation.

    The q-quantile sits at zero-based index ``q * (D - 1)``.
    """
    if not 0.0 < level < 1.0:
        raise BadLevel(f"level must lie in (0, 1), got {level}")
    arr = _as_draws(draws)
    if arr.shape[0] < 2:
        raise EmptyDraws("credible interval needs at least two draws")
    lo, hi = np.quantile(arr[:, coord], [0.5 * (1.0 - level), 0.5 * (1.0 + level)], method="linear")
    return float(lo), float(hi)
