"""Ridge penalty ``rho(beta) = 0.5 (beta - mu)' Q (beta - mu)``.

The penalty weight at sample size n is ``lam * s_n``; as a prior this is the
Gaussian ``N(mu, (lam * s_n * Q)^-1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gbcalib.errors import DimensionMismatch, ValidationError
from gbcalib.linalg import as_sym, sym_sqrt


@dataclass(frozen=True)
class RidgeSpec:
    """Ridge center ``mu``, SPD matrix ``q``, weight ``lam`` and its limit."""

    mu: np.ndarray
    q: np.ndarray
    lam: float
    lam_limit: float | None = None

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        q = as_sym(self.q)
        if q.shape[0] != mu.shape[0]:
            raise DimensionMismatch(f"Q is {q.shape[0]}x{q.shape[0]} but mu has length {mu.shape[0]}")
        if np.linalg.eigvalsh(q)[0] <= 1e-12 * np.max(np.abs(np.diag(q))):
            raise ValidationError("penalty matrix Q must be positive definite")
        if self.lam < 0:
            raise ValidationError("lam must be non-negative")
        lam_limit = self.lam if self.lam_limit is None else self.lam_limit
        if lam_limit < 0:
            raise ValidationError("lam_limit must be non-negative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "lam_limit", float(lam_limit))

    @property
    def p(self) -> int:
        return self.mu.shape[0]

    @classmethod
    def isotropic(cls, p: int, lam: float, mu=0.0) -> "RidgeSpec":
        return cls(mu=np.broadcast_to(np.asarray(mu, dtype=float), (p,)).copy(), q=np.eye(p), lam=lam)


def _diff(spec: RidgeSpec, beta) -> np.ndarray:
    b = np.asarray(beta, dtype=float).reshape(-1)
    if b.shape[0] != spec.p:
        raise DimensionMismatch(f"beta has length {b.shape[0]}, expected {spec.p}")
    return b - spec.mu


def rho(spec: RidgeSpec, beta) -> float:
    d = _diff(spec, beta)
    return 0.5 * float(d @ spec.q @ d)


def rho_grad(spec: RidgeSpec, beta) -> np.ndarray:
    return spec.q @ _diff(spec, beta)


def rho_hess(spec: RidgeSpec) -> np.ndarray:
    return spec.q


def prior_precision(spec: RidgeSpec, s_n: int) -> np.ndarray:
    return spec.lam * s_n * spec.q


def gaussian_prior_logpdf(spec: RidgeSpec, beta, s_n: int) -> float:
    """Log density of ``N(mu, (lam s_n Q)^-1)`` at ``beta``; needs ``lam > 0``."""
    prec = prior_precision(spec, s_n)
    d = _diff(spec, beta)
    log_det_prec = sym_sqrt(prec).log_det
    return float(-0.5 * spec.p * np.log(2 * np.pi) + 0.5 * log_det_prec - 0.5 * d @ prec @ d)
