"""Acceptance checks 1-12.

Each test records a single PASS/FAIL line through the ``verdict`` fixture.
Checks 7-12 share one desk-scale sweep (8 learning rates, 50 replications),
which takes about a minute on one core.
"""

import time

import numpy as np
import pytest

from conftest import make_whitened, random_spd
from gbcalib.calibration import build_omega, sandwich_from_parts
from gbcalib.estimator import map_center
from gbcalib.experiment import SimConfig, sweep
from gbcalib.linalg import sym_sqrt
from gbcalib.model import HuberSpec, hessian, loss, residuals, score
from gbcalib.penalty import RidgeSpec
from gbcalib.sampler import SamplerConfig, effective_sample_size, run_chain, sample_inverse_gaussian


def _rel_fro(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_c01_calibration_identity(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for k in range(100):
        p = (1, 3, 6)[k % 3]
        j, kk, h0_inv = (random_spd(rng, p) for _ in range(3))
        est = sandwich_from_parts(j, kk, h0_inv, np.zeros(p))
        om = build_omega(est)
        jinv = np.linalg.inv(j)
        v = jinv @ kk @ jinv
        worst = max(worst, _rel_fro(om @ h0_inv @ om.T, v))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 1.0
    verdict(1, ok, f"max rel Frobenius error {worst:.2e} (tol 1e-10), {elapsed:.2f}s")
    assert ok


def test_c02_gradient_and_hessian_oracles(verdict):
    start = time.perf_counter()
    h = HuberSpec(1.0)
    rng = np.random.default_rng(202)
    step = 1e-6
    err_g = err_h = 0.0
    points = 0
    while points < 50:
        wd = make_whitened(int(rng.integers(1 << 30)), g=10, p=3)
        beta = rng.normal(0, 1, wd.p)
        # stay clear of the kinks so the central differences never straddle one
        if np.min(np.abs(np.abs(residuals(wd, beta)) - h.c)) < 1e-3:
            continue
        points += 1
        eye = np.eye(wd.p) * step
        fd_g = np.array([(loss(wd, beta + e, h) - loss(wd, beta - e, h)) / (2 * step * wd.n) for e in eye])
        fd_h = np.column_stack([(score(wd, beta + e, h) - score(wd, beta - e, h)) / (2 * step) for e in eye])
        err_g = max(err_g, float(np.max(np.abs(score(wd, beta, h) - fd_g))))
        err_h = max(err_h, float(np.max(np.abs(hessian(wd, beta, h) - fd_h))))
    elapsed = time.perf_counter() - start
    ok = err_g <= 1e-6 and err_h <= 1e-5 and elapsed < 5.0
    verdict(2, ok, f"score err {err_g:.2e} (tol 1e-6), hessian err {err_h:.2e} (tol 1e-5), {elapsed:.2f}s")
    assert ok


def test_c03_symmetric_root(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(303)
    worst = 0.0
    for k in range(100):
        m = random_spd(rng, 1 + k % 8)
        f = sym_sqrt(m)
        worst = max(worst, _rel_fro(f.sqrt @ f.sqrt, m), _rel_fro(f.inv_sqrt @ m @ f.inv_sqrt, np.eye(m.shape[0])))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 1.0
    verdict(3, ok, f"max reconstruction error {worst:.2e} (tol 1e-10), {elapsed:.2f}s")
    assert ok


def test_c04_conjugate_limit(verdict):
    start = time.perf_counter()
    wd = make_whitened(404, g=20, n_i=5, p=1)
    spec = RidgeSpec.isotropic(1, 0.5)
    eta = 1.0
    cfg = SamplerConfig(eta=eta, iterations=5500, burn_in=500, seed=4)
    draws = run_chain(wd, HuberSpec(1e6), spec, cfg, wd.n).draws[:, 0]
    # Gaussian likelihood with the tempered ridge prior, in closed form
    prec = eta * (wd.x.T @ wd.x + spec.lam * wd.n * spec.q)
    var = 1.0 / prec[0, 0]
    mean = var * eta * (wd.x[:, 0] @ wd.y + spec.lam * wd.n * (spec.q @ spec.mu)[0])
    ess = effective_sample_size(draws)
    z_mean = abs(draws.mean() - mean) / np.sqrt(var / ess)
    z_var = abs(draws.var() - var) / (var * np.sqrt(2.0 / ess))
    elapsed = time.perf_counter() - start
    ok = z_mean <= 3 and z_var <= 3 and elapsed < 30
    verdict(4, ok, f"mean z {z_mean:.2f}, variance z {z_var:.2f} (tol 3, ESS {ess:.0f}), {elapsed:.2f}s")
    assert ok


def test_c05_inverse_gaussian_moments(verdict):
    start = time.perf_counter()
    n, mu, lam = 1_000_000, 2.0, 4.0
    x = sample_inverse_gaussian(np.random.default_rng(505), np.full(n, mu), lam)
    var = mu**3 / lam
    # fourth central moment of IG is var^2 (3 + 15 mu / lam)
    m4 = var**2 * (3 + 15 * mu / lam)
    z_mean = abs(x.mean() - mu) / np.sqrt(var / n)
    z_var = abs(x.var() - var) / np.sqrt((m4 - var**2) / n)
    elapsed = time.perf_counter() - start
    ok = z_mean <= 3 and z_var <= 3 and elapsed < 5
    verdict(5, ok, f"mean {x.mean():.5f} (z {z_mean:.2f}), variance {x.var():.5f} (z {z_var:.2f}), {elapsed:.2f}s")
    assert ok


def test_c06_map_eta_invariance(verdict):
    start = time.perf_counter()
    h = HuberSpec(1.0)
    worst = 0.0
    for seed in range(10):
        wd = make_whitened(600 + seed, g=30, p=2)
        spec = RidgeSpec.isotropic(wd.p, 0.5)
        centers = [map_center(wd, h, spec, wd.n, eta) for eta in (0.01, 1.0, 100.0)]
        worst = max(worst, max(float(np.max(np.abs(c - centers[0]))) for c in centers))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 10
    verdict(6, ok, f"max MAP spread across eta {worst:.2e} (tol 1e-10), {elapsed:.2f}s")
    assert ok


# --- desk-scale sweep -------------------------------------------------------


@pytest.fixture(scope="module")
def desk():
    cfg = SimConfig.desk()
    start = time.perf_counter()
    result = sweep(cfg)
    elapsed = time.perf_counter() - start
    print(f"desk sweep: {len(cfg.eta_grid)} eta x {cfg.reps} reps in {elapsed:.1f}s, "
          f"pseudo-true {result.pseudo_true.value[0]:.5f}, success {result.success_rate:.3f}")
    rows = {}
    for r in result.rows:
        rows.setdefault(r.method, {})[r.eta] = r
    return cfg, result, rows


def _series(rows, method, attr):
    return np.array([getattr(rows[method][e], attr) for e in sorted(rows[method])])


@pytest.mark.slow
def test_desk_success_rate(desk):
    _, result, _ = desk
    assert result.success_rate >= 0.99


@pytest.mark.slow
def test_c07_calibrated_coverage(desk, verdict):
    _, _, rows = desk
    cov = _series(rows, "calibrated", "coverage")
    ok = bool(np.all(cov >= 0.90))
    verdict(7, ok, f"calibrated coverage min {cov.min():.3f} (>= 0.90), range [{cov.min():.3f}, {cov.max():.3f}]")
    assert ok


@pytest.mark.slow
def test_c08_uncalibrated_coverage(desk, verdict):
    _, _, rows = desk
    cov = _series(rows, "uncalibrated", "coverage")
    ok = cov[-1] <= 0.40 and cov[0] >= 0.95
    verdict(8, ok, f"uncalibrated coverage {cov[0]:.3f} at smallest eta (>= 0.95), {cov[-1]:.3f} at largest (<= 0.40)")
    assert ok


@pytest.mark.slow
def test_c09_interval_widths(desk, verdict):
    _, _, rows = desk
    cal = _series(rows, "calibrated", "mean_width")
    freq = _series(rows, "frequentist", "mean_width")[0]
    ok = bool(np.all((cal >= 0.24) & (cal <= 0.33))) and abs(freq - 0.2968) <= 0.1 * 0.2968
    verdict(9, ok, f"calibrated width [{cal.min():.4f}, {cal.max():.4f}] (in [0.24, 0.33]), "
                   f"frequentist width {freq:.4f} (0.2968 +/- 10%)")
    assert ok


@pytest.mark.slow
def test_c10_uncalibrated_width_ratio(desk, verdict):
    _, _, rows = desk
    w = _series(rows, "uncalibrated", "mean_width")
    ratio = w[0] / w[-1]
    ok = ratio >= 10
    verdict(10, ok, f"uncalibrated width ratio {w[0]:.4f}/{w[-1]:.4f} = {ratio:.1f} (>= 10)")
    assert ok


@pytest.mark.slow
def test_c11_bias(desk, verdict):
    _, _, rows = desk
    cal = _series(rows, "calibrated", "bias")
    freq = _series(rows, "frequentist", "bias")
    gap = float(np.max(np.abs(cal - freq)))
    ok = gap <= 1e-6 and abs(freq[0]) <= 0.03
    verdict(11, ok, f"max |calibrated - frequentist bias| {gap:.1e} (<= 1e-6), frequentist bias {freq[0]:+.5f} (|.| <= 0.03)")
    assert ok


@pytest.mark.slow
def test_c12_width_invariance(desk, verdict):
    _, _, rows = desk
    w = _series(rows, "calibrated", "mean_width")
    ratio = w.max() / w.min()
    ok = ratio <= 1.25
    verdict(12, ok, f"calibrated width max/min {ratio:.3f} (<= 1.25)")
    assert ok
