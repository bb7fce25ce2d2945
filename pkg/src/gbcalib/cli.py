"""Command-line front end.

Settings resolve as: command-line flag, then config file, then default.
Config files are TOML; tables are flattened, so ``[model] c = 1`` and a
top-level ``c = 1`` mean the same thing.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from gbcalib.calibration import (
    build_omega,
    calibrate_draws,
    identity_residual,
    sandwich_at,
    target_sandwich,
)
from gbcalib.errors import NumericalError, TooFewReps, ValidationError
from gbcalib.estimator import fit_penalized, one_step_newton_center, posterior_mean_center, wald_interval
from gbcalib.experiment import PseudoTrue, SimConfig, default_eta_grid, metrics_csv, pseudo_true, sweep, write_sweep
from gbcalib.model import HuberSpec, WorkingCov, read_dataset_csv, whiten
from gbcalib.penalty import RidgeSpec
from gbcalib.sampler import SamplerConfig, read_draws_csv, run_chain, write_draws_csv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("gbcalib")

EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class UsageError(ValidationError):
    pass


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _float_list(text) -> tuple[float, ...]:
    if isinstance(text, (int, float)):
        return (float(text),)
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _matrix(text):
    if isinstance(text, (list, tuple)):
        rows = [_float_list(r) for r in text]
    else:
        rows = [_float_list(r) for r in str(text).split(";")]
    if any(len(r) != len(rows) for r in rows):
        raise UsageError("q must be a square matrix, rows separated by ';'")
    return tuple(rows)


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {v!r}")


# name -> (parser, help). Names are SimConfig fields plus per-command settings.
SETTINGS = {
    "g": (int, "number of groups"),
    "n_i": (int, "observations per group"),
    "p": (int, "covariate dimension"),
    "beta_true": (_float_list, "generating coefficients (comma list)"),
    "tau2": (float, "random-intercept variance of the working covariance"),
    "sigma2": (float, "residual variance of the working covariance"),
    "contam_prob": (float, "per-observation contamination probability"),
    "contam_sd": (float, "sd of the contaminating noise"),
    "c": (float, "Huber constant"),
    "mu": (_float_list, "ridge center (comma list)"),
    "lam": (float, "ridge weight per observation"),
    "q": (_matrix, "ridge matrix, rows separated by ';'"),
    "eta_grid": (_float_list, "learning rates (comma list, increasing)"),
    "reps": (int, "replications per learning rate"),
    "iterations": (int, "Gibbs sweeps per chain"),
    "burn_in": (int, "discarded initial sweeps"),
    "level": (float, "nominal interval level"),
    "master_seed": (int, "master seed for the simulation"),
    "oracle_g": (int, "groups per pseudo-true replication"),
    "oracle_reps": (int, "pseudo-true replications"),
    "temper_prior": (_bool, "scale the prior precision by eta as well"),
    "eta": (float, "learning rate"),
    "seed": (int, "chain seed"),
    "center": (str, "calibration center: map, posterior-mean or one-step"),
    "threads": (int, "worker processes"),
    "out_dir": (str, "output directory"),
}
ALIASES = {"lambda": "lam"}

FIT_KEYS = ("tau2", "sigma2", "c", "mu", "lam", "q", "level")
SAMPLE_KEYS = FIT_KEYS + ("eta", "iterations", "burn_in", "seed", "temper_prior")
CALIBRATE_KEYS = FIT_KEYS + ("center",)
SIM_KEYS = tuple(f.name for f in dataclasses.fields(SimConfig))

MODEL_DEFAULTS = {
    "tau2": 2.0,
    "sigma2": 1.0,
    "c": 1.0,
    "mu": (0.0,),
    "lam": 0.5,
    "q": None,
    "level": 0.95,
    "eta": 1.0,
    "iterations": 1000,
    "burn_in": 500,
    "seed": 0,
    "temper_prior": True,
    "center": "map",
}


def _normalize_key(key: str) -> str:
    k = key.strip().replace("-", "_")
    return ALIASES.get(k, k)


def _flatten(d: dict, out: dict) -> dict:
    for k, v in d.items():
        if isinstance(v, dict):
            _flatten(v, out)
        else:
            out[_normalize_key(k)] = v
    return out


def load_config(path) -> dict:
    """Read a TOML config and coerce each value with its setting parser."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    flat = _flatten(raw, {})
    out = {}
    for k, v in flat.items():
        if k not in SETTINGS:
            raise UsageError(f"unknown config key {k!r}")
        try:
            out[k] = SETTINGS[k][0](v)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {k}: {exc}") from None
    return out


def resolve(args: argparse.Namespace, keys, defaults: dict) -> dict:
    """Merge defaults < config file < flags for ``keys``."""
    merged = {k: defaults[k] for k in keys if k in defaults}
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        merged.update({k: v for k, v in cfg.items() if k in keys})
    for k in keys:
        if hasattr(args, k):
            merged[k] = getattr(args, k)
    return merged


def resolve_threads(args: argparse.Namespace) -> int:
    if getattr(args, "threads", None) is not None:
        n = args.threads
    elif os.environ.get("GBCALIB_THREADS"):
        try:
            n = int(os.environ["GBCALIB_THREADS"])
        except ValueError:
            raise UsageError("GBCALIB_THREADS must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise UsageError("threads must be positive")
    return n


def _add_settings(parser: argparse.ArgumentParser, keys) -> None:
    for k in keys:
        conv, help_text = SETTINGS[k]
        flags = ["--" + k.replace("_", "-")]
        if k == "lam":
            flags = ["--lambda", "--lam"]
        parser.add_argument(*flags, dest=k, type=_argtype(conv), default=argparse.SUPPRESS, help=help_text)


def _argtype(conv):
    def parse(text):
        try:
            return conv(text)
        except (UsageError, ValueError) as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None

    parse.__name__ = getattr(conv, "__name__", "value")
    return parse


# --- model helpers -----------------------------------------------------------


def _model(settings: dict, p: int):
    cov = WorkingCov(settings["tau2"], settings["sigma2"])
    h = HuberSpec(settings["c"])
    mu = np.broadcast_to(np.asarray(settings["mu"], dtype=float), (p,)) if len(settings["mu"]) in (1, p) else None
    if mu is None:
        raise UsageError(f"mu has {len(settings['mu'])} entries but data has p = {p}")
    q = np.eye(p) if settings.get("q") is None else np.asarray(settings["q"], dtype=float)
    if q.shape != (p, p):
        raise UsageError(f"q must be {p}x{p}")
    spec = RidgeSpec(mu=mu.copy(), q=q, lam=settings["lam"])
    return cov, h, spec


def _load_data(path, settings):
    data = read_dataset_csv(path)
    cov, h, spec = _model(settings, data.p)
    return whiten(data, cov), h, spec


def _out_path(args, default_name: str) -> Path | None:
    if getattr(args, "out", None):
        return Path(args.out)
    out_dir = getattr(args, "out_dir", None)
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        return Path(out_dir) / default_name
    return None


# --- subcommands -------------------------------------------------------------


def cmd_fit(args) -> int:
    settings = resolve(args, FIT_KEYS + ("out_dir",), MODEL_DEFAULTS)
    if not 0.0 < settings["level"] < 1.0:
        raise UsageError(f"BadLevel: level must lie in (0, 1), got {settings['level']}")
    wd, h, spec = _load_data(args.data, settings)
    fit = fit_penalized(wd, h, spec, wd.n)
    if not fit.converged:
        raise NumericalError(f"penalized fit did not converge (grad {fit.grad_norm:.3e})")
    j, k, v = target_sandwich(wd, h, spec, fit.beta_hat)
    print(f"n = {wd.n}, groups = {wd.n_groups}, p = {wd.p}, iterations = {fit.iterations_used}")
    print("beta_hat = " + ", ".join(_fmt(b) for b in fit.beta_hat))
    print("V_target =")
    for row in v:
        print("  " + "  ".join(_fmt(x) for x in row))
    lines = ["coord,beta_hat,v_target,lo,hi,level"]
    for coord in range(wd.p):
        iv = wald_interval(fit.beta_hat, v, wd.n, coord, settings["level"])
        print(f"beta_{coord + 1}: {_fmt(iv.center)}  {100 * settings['level']:g}% CI [{_fmt(iv.lo)}, {_fmt(iv.hi)}]")
        lines.append(",".join([str(coord + 1), _fmt(iv.center), _fmt(v[coord, coord]), _fmt(iv.lo), _fmt(iv.hi), _fmt(iv.level)]))
    out = _out_path(args, "fit.csv")
    if out is not None:
        out.write_text("\n".join(lines) + "\n")
    return 0


def cmd_sample(args) -> int:
    settings = resolve(args, SAMPLE_KEYS + ("out_dir",), MODEL_DEFAULTS)
    wd, h, spec = _load_data(args.data, settings)
    cfg = SamplerConfig(
        eta=settings["eta"],
        iterations=settings["iterations"],
        burn_in=settings["burn_in"],
        seed=settings["seed"],
        temper_prior=settings["temper_prior"],
    )
    draws = run_chain(wd, h, spec, cfg, wd.n)
    out = _out_path(args, "draws.csv")
    if out is None:
        raise UsageError("sample needs --out or --out-dir")
    write_draws_csv(draws, out)
    print(f"wrote {draws.accepted_count} draws to {out}")
    return 0


def cmd_calibrate(args) -> int:
    settings = resolve(args, CALIBRATE_KEYS + ("out_dir",), MODEL_DEFAULTS)
    wd, h, spec = _load_data(args.data, settings)
    draws = read_draws_csv(args.draws)
    if draws.p != wd.p:
        raise UsageError(f"draws have p = {draws.p}, data has p = {wd.p}")
    center_kind = settings["center"]
    if center_kind == "map":
        fit = fit_penalized(wd, h, spec, wd.n)
        if not fit.converged:
            raise NumericalError("penalized fit did not converge")
        center = fit.beta_hat
    elif center_kind == "posterior-mean":
        center = posterior_mean_center(draws)
    elif center_kind == "one-step":
        center = one_step_newton_center(wd, h, spec, wd.n, posterior_mean_center(draws))
    else:
        raise UsageError(f"unknown center {center_kind!r}")
    est = sandwich_at(wd, h, spec, center, wd.n, draws)
    omega = build_omega(est)
    cal = calibrate_draws(draws, est, omega)
    out = _out_path(args, "calibrated.csv")
    if out is None:
        raise UsageError("calibrate needs --out or --out-dir")
    write_draws_csv(cal.draws, out, prefix="beta_calib")
    report = {
        "center_kind": center_kind,
        "center": [float(v) for v in est.center],
        "j_lambda_hat": est.j_lambda_hat.tolist(),
        "k_hat": est.k_hat.tolist(),
        "v_target_hat": est.v_target_hat.tolist(),
        "h0_inv_hat": est.h0_inv_hat.tolist(),
        "h0_clamped": est.h0_clamped,
        "omega_hat": omega.tolist(),
        "omega_minus_identity_fro": float(np.linalg.norm(omega - np.eye(wd.p))),
        "identity_residual": identity_residual(est, omega),
        "draws": cal.draws.shape[0],
    }
    report_path = Path(args.report) if args.report else out.with_suffix(".report.json")
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    print(f"wrote {cal.draws.shape[0]} calibrated draws to {out}")
    print(f"identity residual |Omega H0^-1 Omega' - V|_F / |V|_F = {report['identity_residual']:.3e}")
    print(f"|Omega - I|_F = {report['omega_minus_identity_fro']:.6g}")
    return 0


def _sim_config(args) -> SimConfig:
    base = SimConfig.desk() if getattr(args, "desk", False) else SimConfig()
    defaults = dataclasses.asdict(base)
    settings = resolve(args, SIM_KEYS, defaults)
    if "eta_points" in args and "eta_grid" not in vars(args):
        settings["eta_grid"] = default_eta_grid(args.eta_points)
    return SimConfig(**settings)


def cmd_experiment(args) -> int:
    cfg = _sim_config(args)
    if cfg.reps < 2:
        raise TooFewReps(f"reps = {cfg.reps}; aggregation needs at least 2")
    threads = resolve_threads(args)
    out_dir = resolve(args, ("out_dir",), {"out_dir": "results"})["out_dir"]
    truth = None
    if args.pseudo_true_json:
        truth = PseudoTrue.from_dict(json.loads(Path(args.pseudo_true_json).read_text()))
    result = sweep(cfg, truth, threads=threads)
    metrics_path, records_path = write_sweep(result, out_dir)
    Path(out_dir, "pseudo_true.json").write_text(json.dumps(result.pseudo_true.to_dict(), indent=2) + "\n")
    sys.stdout.write(metrics_csv(result.rows))
    print(f"wrote {metrics_path} and {records_path} ({len(result.failures)} failed cells)")
    return 0


def cmd_pseudo_true(args) -> int:
    cfg = _sim_config(args)
    truth = pseudo_true(cfg, threads=resolve_threads(args))
    text = json.dumps(truth.to_dict(), indent=2) + "\n"
    out = _out_path(args, "pseudo_true.json")
    if out is not None:
        out.write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gbcalib", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, keys):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--out-dir", dest="out_dir", default=argparse.SUPPRESS)
        _add_settings(p, keys)
        return p

    p = common(sub.add_parser("fit", help="penalized Huber fit with sandwich Wald intervals"), FIT_KEYS)
    p.add_argument("data", help="CSV with columns group_id,y,x_1..x_p")
    p.add_argument("--out", help="write interval table CSV here")
    p.set_defaults(func=cmd_fit)

    p = common(sub.add_parser("sample", help="Gibbs draws from the tempered posterior"), SAMPLE_KEYS)
    p.add_argument("data")
    p.add_argument("--out", help="draw CSV path")
    p.set_defaults(func=cmd_sample)

    p = common(sub.add_parser("calibrate", help="location-scale calibration of posterior draws"), CALIBRATE_KEYS)
    p.add_argument("data")
    p.add_argument("draws", help="draw CSV from `gbcalib sample`")
    p.add_argument("--out", help="calibrated draw CSV path")
    p.add_argument("--report", help="JSON report path (default: next to --out)")
    p.set_defaults(func=cmd_calibrate)

    for name, func, help_text in (
        ("experiment", cmd_experiment, "simulation sweep over the learning-rate grid"),
        ("pseudo-true", cmd_pseudo_true, "Monte Carlo approximation of the penalized target"),
    ):
        p = common(sub.add_parser(name, help=help_text), SIM_KEYS)
        p.add_argument("--desk", action="store_true", help="start from desk-scale defaults")
        p.add_argument("--eta-points", dest="eta_points", type=int, default=argparse.SUPPRESS,
                       help="log-spaced grid size on [0.01, 100] (ignored with --eta-grid)")
        p.add_argument("--threads", type=int, default=None)
        if name == "experiment":
            p.add_argument("--pseudo-true-json", dest="pseudo_true_json", help="reuse a stored pseudo-true value")
        else:
            p.add_argument("--out", help="JSON output path")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
