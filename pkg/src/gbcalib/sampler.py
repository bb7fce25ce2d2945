"""Data-augmented Gibbs sampler for the tempered Huber posterior.

The Huber kernel is written as an infimal convolution of a quadratic and a
Laplace term with latent shift ``t``; the Laplace term is in turn a scale
mixture of normals with latent scale ``omega``. Given the latents, every
block is conjugate, so one sweep updates ``omega -> t -> beta`` exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from gbcalib.errors import DimensionMismatch, EmptyDraws, ValidationError
from gbcalib.linalg import SpdFactor, sym_sqrt
from gbcalib.model import HuberSpec, WhitenedDataset
from gbcalib.penalty import RidgeSpec

T_FLOOR = 1e-12


@dataclass(frozen=True)
class SamplerConfig:
    """Chain settings.

    ``temper_prior`` multiplies the ridge prior precision by ``eta`` as well
    as the loss, so the whole composite loss is tempered. Set it to False to
    leave the prior untempered.
    """

    eta: float
    iterations: int
    burn_in: int = 0
    seed: int = 0
    init_beta: np.ndarray | None = None
    temper_prior: bool = True

    def __post_init__(self):
        if not self.eta > 0:
            raise ValidationError("eta must be > 0")
        if self.iterations < 1:
            raise ValidationError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValidationError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class AugmentedState:
    beta: np.ndarray
    t: np.ndarray
    omega: np.ndarray


@dataclass(frozen=True)
class DrawMatrix:
    draws: np.ndarray
    eta: float = float("nan")
    seed: int | None = None

    def __post_init__(self):
        d = np.asarray(self.draws, dtype=float)
        if d.ndim == 1:
            d = d[:, None]
        if d.ndim != 2:
            raise DimensionMismatch("draws must be a D x p matrix")
        object.__setattr__(self, "draws", d)

    @property
    def accepted_count(self) -> int:
        return self.draws.shape[0]

    @property
    def p(self) -> int:
        return self.draws.shape[1]


# --- inverse Gaussian ------------------------------------------------------


def sample_inverse_gaussian(rng: np.random.Generator, mean, shape) -> np.ndarray:
    """Michael-Schucany-Haas transform with one accept/reject step.

    The smaller root of the quadratic is computed as ``mean^2 / larger_root``
    so very large means (``|t|`` near zero) lose no precision.
    """
    mean = np.asarray(mean, dtype=float)
    shape = np.broadcast_to(np.asarray(shape, dtype=float), mean.shape)
    y = rng.standard_normal(mean.shape) ** 2
    my = mean * y
    x1 = mean / (1.0 + (my + np.sqrt(4.0 * mean * shape * y + my * my)) / (2.0 * shape))
    z = rng.random(mean.shape)
    return np.where(z <= mean / (mean + x1), x1, mean * (mean / x1))


# --- conditional updates ---------------------------------------------------


def step_omega(state: AugmentedState, h: HuberSpec, cfg: SamplerConfig, rng: np.random.Generator) -> AugmentedState:
    eta_c = cfg.eta * h.c
    abs_t = np.maximum(np.abs(state.t), T_FLOOR)
    u = sample_inverse_gaussian(rng, eta_c / abs_t, eta_c * eta_c)
    return replace(state, omega=1.0 / u)


def t_conditional(residual, omega, eta: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of ``t | beta, omega``."""
    var = 1.0 / (eta + 1.0 / np.asarray(omega, dtype=float))
    return var * eta * np.asarray(residual, dtype=float), var


def step_t(state: AugmentedState, wd: WhitenedDataset, cfg: SamplerConfig, rng: np.random.Generator) -> AugmentedState:
    r = wd.y - wd.x @ state.beta
    mean, var = t_conditional(r, state.omega, cfg.eta)
    return replace(state, t=mean + np.sqrt(var) * rng.standard_normal(mean.shape))


def beta_precision(wd: WhitenedDataset, spec: RidgeSpec, cfg: SamplerConfig, s_n: int) -> np.ndarray:
    prior_weight = spec.lam * s_n * (cfg.eta if cfg.temper_prior else 1.0)
    out = cfg.eta * (wd.x.T @ wd.x) + prior_weight * spec.q
    return 0.5 * (out + out.T)


def beta_conditional(
    state: AugmentedState, wd: WhitenedDataset, spec: RidgeSpec, cfg: SamplerConfig, s_n: int
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and precision of ``beta | t, omega``."""
    prec = beta_precision(wd, spec, cfg, s_n)
    prior_weight = spec.lam * s_n * (cfg.eta if cfg.temper_prior else 1.0)
    rhs = cfg.eta * (wd.x.T @ (wd.y - state.t)) + prior_weight * (spec.q @ spec.mu)
    return np.linalg.solve(prec, rhs), prec


def step_beta(
    state: AugmentedState,
    wd: WhitenedDataset,
    spec: RidgeSpec,
    cfg: SamplerConfig,
    s_n: int,
    rng: np.random.Generator,
    precision_factor: SpdFactor | None = None,
) -> AugmentedState:
    """Draw beta from its Gaussian full conditional.

    ``precision_factor`` (the symmetric root of the precision) may be passed
    in, since the precision does not change between sweeps.
    """
    mean, prec = beta_conditional(state, wd, spec, cfg, s_n)
    if precision_factor is None:
        precision_factor = sym_sqrt(prec)
    z = rng.standard_normal(mean.shape[0])
    return replace(state, beta=mean + precision_factor.inv_sqrt @ z)


def initial_state(wd: WhitenedDataset, cfg: SamplerConfig) -> AugmentedState:
    if cfg.init_beta is None:
        beta = np.zeros(wd.p)
    else:
        beta = np.asarray(cfg.init_beta, dtype=float).reshape(-1)
        if beta.shape[0] != wd.p:
            raise DimensionMismatch(f"init_beta has length {beta.shape[0]}, expected {wd.p}")
    return AugmentedState(beta=beta, t=np.zeros(wd.n), omega=np.ones(wd.n))


def run_chain(wd: WhitenedDataset, h: HuberSpec, spec: RidgeSpec, cfg: SamplerConfig, s_n: int) -> DrawMatrix:
    """Run ``cfg.iterations`` sweeps and keep the post burn-in beta draws."""
    if spec.p != wd.p:
        raise DimensionMismatch(f"penalty has dimension {spec.p}, data has p = {wd.p}")
    rng = np.random.default_rng(cfg.seed)
    state = initial_state(wd, cfg)
    factor = sym_sqrt(beta_precision(wd, spec, cfg, s_n))
    out = np.empty((cfg.iterations - cfg.burn_in, wd.p))
    for it in range(cfg.iterations):
        state = step_omega(state, h, cfg, rng)
        state = step_t(state, wd, cfg, rng)
        state = step_beta(state, wd, spec, cfg, s_n, rng, precision_factor=factor)
        if it >= cfg.burn_in:
            out[it - cfg.burn_in] = state.beta
    return DrawMatrix(draws=out, eta=cfg.eta, seed=cfg.seed)


# --- diagnostics -----------------------------------------------------------


def autocorrelation(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] == 0:
        return np.zeros(n)
    return acov / acov[0]


def effective_sample_size(x) -> float:
    """ESS of a scalar chain by Geyer's initial monotone sequence estimator."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 4:
        return float(n)
    rho = autocorrelation(x)
    pair_sums = []
    for k in range(0, n - 1, 2):
        s = rho[k] + rho[k + 1]
        if s <= 0:
            break
        pair_sums.append(s)
    if not pair_sums:
        return float(n)
    pairs = np.minimum.accumulate(np.asarray(pair_sums))
    tau = -1.0 + 2.0 * float(np.sum(pairs))
    return float(n / max(tau, 1.0 / np.log10(n)))


# --- CSV dump --------------------------------------------------------------


def write_draws_csv(draws: DrawMatrix | np.ndarray, path, prefix: str = "beta") -> None:
    arr = draws.draws if isinstance(draws, DrawMatrix) else np.atleast_2d(np.asarray(draws, dtype=float))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["draw_index"] + [f"{prefix}_{k + 1}" for k in range(arr.shape[1])])
        for d, row in enumerate(arr):
            w.writerow([d] + [format(v, ".17g") for v in row])


def read_draws_csv(path) -> DrawMatrix:
    from gbcalib.model import DatasetFormatError

    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "draw_index" or len(header) < 2:
            raise DatasetFormatError("draw file header must be draw_index,beta_1,...", 1)
        p = len(header) - 1
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != p + 1:
                raise DatasetFormatError(f"expected {p + 1} fields, got {len(row)}", line_no)
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise DatasetFormatError("non-numeric value", line_no) from None
    if not rows:
        raise EmptyDraws("draw file has no rows")
    return DrawMatrix(draws=np.asarray(rows))
