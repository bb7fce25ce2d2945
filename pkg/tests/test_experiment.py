import numpy as np
import pytest

from gbcalib.errors import TooFewReps, ValidationError
from gbcalib.experiment import (
    CellRecord,
    PseudoTrue,
    SimConfig,
    aggregate,
    default_eta_grid,
    generate_dataset,
    metrics_csv,
    pseudo_true,
    records_csv,
    run_cell,
    simulate_arrays,
    sweep,
)


def test_default_grid_is_log_spaced():
    grid = default_eta_grid()
    assert len(grid) == 20
    assert grid[0] == pytest.approx(0.01) and grid[-1] == pytest.approx(100.0)
    assert grid[1] == pytest.approx(0.016237767391887217, rel=1e-12)


def test_noiseless_generation():
    cfg = SimConfig(contam_prob=0.0, tau2=1e-12, sigma2=1e-12, g=5)
    data = generate_dataset(cfg, 3)
    for grp in data.groups:
        np.testing.assert_allclose(grp.y, grp.x[:, 0] * 2.0, atol=1e-5)


def test_generation_is_deterministic():
    cfg = SimConfig(g=4)
    a, b = generate_dataset(cfg, 99), generate_dataset(cfg, 99)
    for ga, gb in zip(a.groups, b.groups):
        np.testing.assert_array_equal(ga.y, gb.y)
        np.testing.assert_array_equal(ga.x, gb.x)


def test_contamination_frequency():
    _, _, mask = simulate_arrays(SimConfig(), np.random.default_rng(0), g=200_000)
    assert mask.size == 1_000_000
    assert abs(mask.mean() - 0.1) <= 0.001


def test_pseudo_true_correct_specification():
    cfg = SimConfig(contam_prob=0.0, c=1e6, lam=1e-12)
    truth = pseudo_true(cfg, oracle_g=200, oracle_reps=30)
    assert abs(truth.value[0] - 2.0) <= 3 * truth.se[0]


def test_pseudo_true_penalty_dominated():
    truth = pseudo_true(SimConfig(lam=1e6), oracle_g=200, oracle_reps=10)
    # shrinkage leaves O(1/lambda); the Monte Carlo se is smaller than that
    assert abs(truth.value[0]) <= 1e-5


@pytest.mark.slow
def test_pseudo_true_desk_scale_is_stable():
    a = pseudo_true(SimConfig(master_seed=1), oracle_g=2000, oracle_reps=100)
    b = pseudo_true(SimConfig(master_seed=2), oracle_g=2000, oracle_reps=100)
    assert 0.0 < a.value[0] < 2.0
    assert abs(a.value[0] - b.value[0]) <= 3 * np.hypot(a.se[0], b.se[0])


def test_pseudo_true_validation():
    with pytest.raises(ValidationError):
        pseudo_true(SimConfig(), oracle_g=100, oracle_reps=1)


def test_run_cell_properties():
    cfg = SimConfig.desk()
    small = run_cell(cfg, 0.01, 0, 0)
    big = run_cell(cfg, 100.0, 0, 7)
    assert small["frequentist"] == big["frequentist"]
    assert small["calibrated"][0] == small["frequentist"][0]
    width = {m: v[2] - v[1] for m, v in small.items()}
    assert width["uncalibrated"] > width["calibrated"]
    for cell in (small, big):
        fw = cell["frequentist"][2] - cell["frequentist"][1]
        cw = cell["calibrated"][2] - cell["calibrated"][1]
        assert abs(cw - fw) <= 0.15 * fw


def _truth(v=0.0):
    return PseudoTrue(value=np.array([v]), oracle_g=10, oracle_reps=2, se=np.array([0.0]))


def test_aggregate_metrics():
    recs = [CellRecord("frequentist", 1.0, r, point, point - 1, point + 1) for r, point in enumerate([-0.5, 0.5, -0.2, 0.2])]
    (row,) = aggregate(recs, _truth())
    assert row.coverage == 1.0
    assert row.bias == pytest.approx(0.0, abs=1e-15)
    assert row.mean_width == 2.0
    assert row.bias_sd == pytest.approx(np.std([-0.5, 0.5, -0.2, 0.2], ddof=1))
    assert row.reps == 4
    recs = [CellRecord("uncalibrated", 1.0, r, 0.0, 1.0, 2.0) for r in range(3)]
    assert aggregate(recs, _truth())[0].coverage == 0.0


def test_aggregate_needs_two_reps():
    with pytest.raises(TooFewReps):
        aggregate([CellRecord("calibrated", 1.0, 0, 0.0, -1.0, 1.0)], _truth())


def _tiny(**kw):
    base = dict(g=20, eta_grid=(0.5,), reps=2, iterations=60, burn_in=20)
    base.update(kw)
    return SimConfig(**base)


def test_sweep_rows_and_determinism():
    cfg = _tiny()
    truth = _truth(1.0)
    a = sweep(cfg, truth)
    b = sweep(cfg, truth)
    assert len(a.rows) == 3
    assert [r.method for r in a.rows] == ["calibrated", "frequentist", "uncalibrated"]
    assert metrics_csv(a.rows) == metrics_csv(b.rows)
    assert records_csv(a.records, truth) == records_csv(b.records, truth)
    assert metrics_csv(a.rows).splitlines()[0] == "method,eta,coverage,mean_width,bias,bias_sd,reps"


def test_sweep_parallel_matches_serial():
    cfg = _tiny(eta_grid=(0.1, 10.0))
    truth = _truth(1.0)
    assert metrics_csv(sweep(cfg, truth, threads=2).rows) == metrics_csv(sweep(cfg, truth, threads=1).rows)


def test_frequentist_rows_constant_across_eta():
    res = sweep(_tiny(eta_grid=(0.1, 1.0, 10.0), reps=3), _truth(1.0))
    freq = [(r.coverage, r.mean_width, r.bias, r.bias_sd) for r in res.rows if r.method == "frequentist"]
    assert all(f == freq[0] for f in freq)


def test_sweep_rejects_single_rep():
    with pytest.raises(TooFewReps):
        sweep(_tiny(reps=1), _truth())


@pytest.mark.parametrize("bad", [dict(eta_grid=(1.0, 0.5)), dict(burn_in=60), dict(level=1.5), dict(contam_prob=2.0)])
def test_config_validation(bad):
    with pytest.raises(ValidationError):
        _tiny(**bad)
