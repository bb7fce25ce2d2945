"""Simulation study: frequentist, uncalibrated and calibrated intervals over a learning-rate grid.

Every cell ``(eta, rep)`` draws its randomness from a ``SeedSequence`` keyed on
the master seed and the cell coordinates, so cells can run in any order or
in parallel and still reproduce bit for bit.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from gbcalib.calibration import calibrate_draws, credible_interval, sandwich_at, target_sandwich
from gbcalib.errors import GbcalibError, NoConvergence, TooFewReps, ValidationError
from gbcalib.estimator import fit_penalized, map_center, posterior_mean_center, wald_interval
from gbcalib.model import Group, GroupedDataset, HuberSpec, WorkingCov, whiten
from gbcalib.penalty import RidgeSpec
from gbcalib.sampler import SamplerConfig, run_chain

log = logging.getLogger(__name__)

METHODS = ("calibrated", "frequentist", "uncalibrated")

# SeedSequence spawn-key prefixes; one stream family per purpose.
_DATA_STREAM = 0
_CHAIN_STREAM = 1
_ORACLE_STREAM = 2


def default_eta_grid(points: int = 20, lo: float = 0.01, hi: float = 100.0) -> tuple[float, ...]:
    return tuple(float(v) for v in np.logspace(math.log10(lo), math.log10(hi), points))


@dataclass(frozen=True)
class SimConfig:
    g: int = 100
    n_i: int = 5
    p: int = 1
    beta_true: tuple[float, ...] = (2.0,)
    tau2: float = 2.0
    sigma2: float = 1.0
    contam_prob: float = 0.1
    contam_sd: float = 10.0
    c: float = 1.0
    mu: tuple[float, ...] = (0.0,)
    lam: float = 0.5
    q: tuple[tuple[float, ...], ...] | None = None
    eta_grid: tuple[float, ...] = field(default_factory=default_eta_grid)
    reps: int = 200
    iterations: int = 1000
    burn_in: int = 500
    level: float = 0.95
    master_seed: int = 20240601
    oracle_g: int = 5000
    oracle_reps: int = 1000
    temper_prior: bool = True

    def __post_init__(self):
        beta = tuple(float(v) for v in np.broadcast_to(np.asarray(self.beta_true, dtype=float), (self.p,)))
        mu = tuple(float(v) for v in np.broadcast_to(np.asarray(self.mu, dtype=float), (self.p,)))
        object.__setattr__(self, "beta_true", beta)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "eta_grid", tuple(float(v) for v in self.eta_grid))
        if self.q is not None:
            object.__setattr__(self, "q", tuple(tuple(float(v) for v in row) for row in self.q))
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.g >= 2, "g must be at least 2"),
            (self.n_i >= 1, "n_i must be positive"),
            (self.p >= 1, "p must be positive"),
            (self.tau2 > 0 and self.sigma2 > 0, "tau2 and sigma2 must be positive"),
            (0.0 <= self.contam_prob <= 1.0, "contam_prob must lie in [0, 1]"),
            (self.contam_sd >= 0, "contam_sd must be non-negative"),
            (self.c > 0, "c must be positive"),
            (self.lam >= 0, "lambda must be non-negative"),
            (len(self.eta_grid) >= 1, "eta_grid must not be empty"),
            (all(e > 0 for e in self.eta_grid), "every eta must be > 0"),
            (all(a < b for a, b in zip(self.eta_grid, self.eta_grid[1:])), "eta_grid must be strictly increasing"),
            (self.reps >= 1, "reps must be positive"),
            (self.iterations >= 1, "iterations must be positive"),
            (0 <= self.burn_in < self.iterations, "burn_in must satisfy 0 <= burn_in < iterations"),
            (self.iterations - self.burn_in >= 2, "need at least two retained draws"),
            (0.0 < self.level < 1.0, "level must lie in (0, 1)"),
            (0 <= self.master_seed < 2**64, "master_seed must be a 64-bit unsigned integer"),
            (self.oracle_g >= 2, "oracle_g must be at least 2"),
            (self.oracle_reps >= 2, "oracle_reps must be at least 2"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValidationError(msg)
        self.ridge()

    @classmethod
    def desk(cls, **overrides) -> "SimConfig":
        """Reduced settings that finish in minutes on one core."""
        base = dict(eta_grid=default_eta_grid(8), reps=50, oracle_g=2000, oracle_reps=100)
        base.update(overrides)
        return cls(**base)

    @property
    def n(self) -> int:
        return self.g * self.n_i

    def huber(self) -> HuberSpec:
        return HuberSpec(self.c)

    def working_cov(self) -> WorkingCov:
        return WorkingCov(self.tau2, self.sigma2)

    def ridge(self) -> RidgeSpec:
        q = np.eye(self.p) if self.q is None else np.asarray(self.q, dtype=float)
        return RidgeSpec(mu=np.asarray(self.mu), q=q, lam=self.lam)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PseudoTrue:
    value: np.ndarray
    oracle_g: int
    oracle_reps: int
    se: np.ndarray
    skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "value": [float(v) for v in self.value],
            "se": [float(v) for v in self.se],
            "oracle_g": self.oracle_g,
            "oracle_reps": self.oracle_reps,
            "skipped": self.skipped,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PseudoTrue":
        return cls(
            value=np.asarray(d["value"], dtype=float),
            oracle_g=int(d["oracle_g"]),
            oracle_reps=int(d["oracle_reps"]),
            se=np.asarray(d["se"], dtype=float),
            skipped=int(d.get("skipped", 0)),
        )


@dataclass(frozen=True)
class MetricsRow:
    method: str
    eta: float
    coverage: float
    mean_width: float
    bias: float
    bias_sd: float
    reps: int


@dataclass(frozen=True)
class CellRecord:
    """One method's output for one replication at one learning rate."""

    method: str
    eta: float
    rep: int
    point: float
    lo: float
    hi: float


@dataclass
class SweepResult:
    rows: list[MetricsRow]
    records: list[CellRecord]
    failures: list[tuple[float, int, str]]
    pseudo_true: PseudoTrue

    @property
    def success_rate(self) -> float:
        total = len({(r.eta, r.rep) for r in self.records}) + len(self.failures)
        return 1.0 if total == 0 else 1.0 - len(self.failures) / total


# --- data generation -------------------------------------------------------


def _rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


def simulate_arrays(cfg: SimConfig, rng: np.random.Generator, g: int | None = None):
    """Raw draws ``(x, y, contaminated)`` with shapes (g, n_i, p), (g, n_i), (g, n_i)."""
    g = cfg.g if g is None else g
    x = rng.standard_normal((g, cfg.n_i, cfg.p))
    b = rng.normal(0.0, math.sqrt(cfg.tau2), size=(g, 1))
    eps = rng.normal(0.0, math.sqrt(cfg.sigma2), size=(g, cfg.n_i))
    contaminated = rng.random((g, cfg.n_i)) < cfg.contam_prob
    xi = rng.normal(0.0, cfg.contam_sd, size=(g, cfg.n_i))
    y = x @ np.asarray(cfg.beta_true) + b + eps + np.where(contaminated, xi, 0.0)
    return x, y, contaminated


def _to_dataset(x: np.ndarray, y: np.ndarray) -> GroupedDataset:
    return GroupedDataset(tuple(Group(x=x[i], y=y[i]) for i in range(x.shape[0])))


def generate_dataset(cfg: SimConfig, seed, g: int | None = None) -> GroupedDataset:
    """Simulate one dataset; ``seed`` is anything ``default_rng`` accepts."""
    x, y, _ = simulate_arrays(cfg, np.random.default_rng(seed), g)
    return _to_dataset(x, y)


def replication_dataset(cfg: SimConfig, rep_index: int) -> GroupedDataset:
    """Dataset for replication ``rep_index``; shared by every learning rate."""
    x, y, _ = simulate_arrays(cfg, _rng(cfg.master_seed, _DATA_STREAM, rep_index))
    return _to_dataset(x, y)


def chain_seed(cfg: SimConfig, eta_index: int, rep_index: int) -> int:
    ss = np.random.SeedSequence(cfg.master_seed, spawn_key=(_CHAIN_STREAM, eta_index, rep_index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# --- pseudo-true value ------------------------------------------------------


def _oracle_fit(args) -> np.ndarray | None:
    cfg, oracle_g, r = args
    x, y, _ = simulate_arrays(cfg, _rng(cfg.master_seed, _ORACLE_STREAM, r), oracle_g)
    wd = whiten(_to_dataset(x, y), cfg.working_cov())
    fit = fit_penalized(wd, cfg.huber(), cfg.ridge(), wd.n)
    return fit.beta_hat if fit.converged else None


def pseudo_true(
    cfg: SimConfig, oracle_g: int | None = None, oracle_reps: int | None = None, threads: int = 1
) -> PseudoTrue:
    """Average penalized estimate over large simulated datasets.

    The penalty weight per observation stays ``lam``, so the target is the
    solution of the population equation at every ``oracle_g``.
    """
    oracle_g = cfg.oracle_g if oracle_g is None else oracle_g
    oracle_reps = cfg.oracle_reps if oracle_reps is None else oracle_reps
    if oracle_reps < 2:
        raise ValidationError("oracle_reps must be at least 2")
    jobs = [(cfg, oracle_g, r) for r in range(oracle_reps)]
    fits = _map(_oracle_fit, jobs, threads)
    good = np.asarray([f for f in fits if f is not None])
    skipped = oracle_reps - good.shape[0]
    if skipped > 0.01 * oracle_reps or good.shape[0] < 2:
        raise NoConvergence(f"{skipped} of {oracle_reps} oracle fits failed")
    return PseudoTrue(
        value=good.mean(axis=0),
        oracle_g=oracle_g,
        oracle_reps=oracle_reps,
        se=good.std(axis=0, ddof=1) / math.sqrt(good.shape[0]),
        skipped=skipped,
    )


# --- one cell ---------------------------------------------------------------


def run_cell(cfg: SimConfig, eta: float, rep_index: int, eta_index: int = 0, coord: int = 0) -> dict[str, tuple[float, float, float]]:
    """``method -> (point, lo, hi)`` for one replication at one learning rate.

    The uncalibrated and calibrated methods share the same chain.
    """
    wd = whiten(replication_dataset(cfg, rep_index), cfg.working_cov())
    h, spec, s_n = cfg.huber(), cfg.ridge(), wd.n

    beta_map = map_center(wd, h, spec, s_n, eta)
    _, _, v = target_sandwich(wd, h, spec, beta_map)
    wald = wald_interval(beta_map, v, s_n, coord, cfg.level)

    sampler_cfg = SamplerConfig(
        eta=eta,
        iterations=cfg.iterations,
        burn_in=cfg.burn_in,
        seed=chain_seed(cfg, eta_index, rep_index),
        temper_prior=cfg.temper_prior,
    )
    draws = run_chain(wd, h, spec, sampler_cfg, s_n)
    raw_lo, raw_hi = credible_interval(draws, coord, cfg.level)
    raw_point = posterior_mean_center(draws)[coord]

    est = sandwich_at(wd, h, spec, beta_map, s_n, draws)
    calibrated = calibrate_draws(draws, est)
    cal_lo, cal_hi = credible_interval(calibrated.draws, coord, cfg.level)

    return {
        "frequentist": (float(beta_map[coord]), wald.lo, wald.hi),
        "uncalibrated": (float(raw_point), raw_lo, raw_hi),
        "calibrated": (float(calibrated.center[coord]), cal_lo, cal_hi),
    }


def _cell_job(args):
    cfg, eta_index, rep = args
    eta = cfg.eta_grid[eta_index]
    try:
        return eta_index, rep, run_cell(cfg, eta, rep, eta_index), None
    except (GbcalibError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return eta_index, rep, None, f"{type(exc).__name__}: {exc}"


def _map(fn, jobs: Sequence, threads: int) -> list:
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * threads))))


# --- aggregation --------------------------------------------------------------


def aggregate(records: Iterable[CellRecord], truth: PseudoTrue, coord: int = 0) -> list[MetricsRow]:
    """Coverage, mean width, mean bias and bias sd per (method, eta).

    Rows are sorted by method, then eta.
    """
    target = float(truth.value[coord])
    cells: dict[tuple[str, float], list[CellRecord]] = {}
    for r in records:
        cells.setdefault((r.method, r.eta), []).append(r)
    rows = []
    for (method, eta), recs in sorted(cells.items()):
        if len(recs) < 2:
            raise TooFewReps(f"{method} at eta={eta} has {len(recs)} replication(s); need at least 2")
        recs = sorted(recs, key=lambda r: r.rep)
        points = np.array([r.point for r in recs])
        lo = np.array([r.lo for r in recs])
        hi = np.array([r.hi for r in recs])
        covered = int(np.sum((lo <= target) & (target <= hi)))
        err = points - target
        rows.append(
            MetricsRow(
                method=method,
                eta=eta,
                coverage=covered / len(recs),
                mean_width=float(np.mean(hi - lo)),
                bias=float(np.mean(err)),
                bias_sd=float(np.std(err, ddof=1)),
                reps=len(recs),
            )
        )
    return rows


def sweep(cfg: SimConfig, truth: PseudoTrue | None = None, threads: int = 1) -> SweepResult:
    """Run every (eta, rep) cell and aggregate; a pure function of ``cfg``."""
    if cfg.reps < 2:
        raise TooFewReps(f"reps = {cfg.reps}; aggregation needs at least 2")
    if truth is None:
        truth = pseudo_true(cfg, threads=threads)
    jobs = [(cfg, k, rep) for k in range(len(cfg.eta_grid)) for rep in range(cfg.reps)]
    records: list[CellRecord] = []
    failures: list[tuple[float, int, str]] = []
    for eta_index, rep, out, err in _map(_cell_job, jobs, threads):
        eta = cfg.eta_grid[eta_index]
        if out is None:
            log.warning("cell eta=%g rep=%d failed: %s", eta, rep, err)
            failures.append((eta, rep, err))
            continue
        for method, (point, lo, hi) in out.items():
            records.append(CellRecord(method, eta, rep, point, lo, hi))
    result = SweepResult(rows=aggregate(records, truth), records=records, failures=failures, pseudo_true=truth)
    if result.success_rate < 0.99:
        log.warning("only %.1f%% of replications succeeded", 100 * result.success_rate)
    return result


# --- CSV output -------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(v, ".17g")


def metrics_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "eta", "coverage", "mean_width", "bias", "bias_sd", "reps"])
    for r in sorted(rows, key=lambda r: (r.method, r.eta)):
        w.writerow([r.method, _fmt(r.eta), _fmt(r.coverage), _fmt(r.mean_width), _fmt(r.bias), _fmt(r.bias_sd), r.reps])
    return buf.getvalue()


def records_csv(records: Sequence[CellRecord], truth: PseudoTrue, coord: int = 0) -> str:
    target = float(truth.value[coord])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "eta", "rep", "point", "lo", "hi", "covered"])
    for r in sorted(records, key=lambda r: (r.method, r.eta, r.rep)):
        w.writerow([r.method, _fmt(r.eta), r.rep, _fmt(r.point), _fmt(r.lo), _fmt(r.hi), int(r.lo <= target <= r.hi)])
    return buf.getvalue()


def write_sweep(result: SweepResult, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    records_path = out / "records.csv"
    metrics_path.write_text(metrics_csv(result.rows))
    records_path.write_text(records_csv(result.records, result.pseudo_true))
    return metrics_path, records_path
