import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ripforge.experiments import forge_instance
from ripforge.sensing import example1_instance, EXAMPLE1_SPURIOUS
from ripforge.sgd import (ExperimentSummary, SgdConfig, binomial_half_width, classify, failure_rate_experiment,
                          gamma_sweep, histogram, histogram_modes, quantile_band, run_trials, sgd_run, trial_rng)


def reference_trial(inst, config, trial_index):
    """Scalar loop over one trial, drawing from the same per-trial stream."""
    g = trial_rng(config.master_seed, trial_index)
    x = g.standard_normal((inst.n, inst.r))
    idx = g.integers(0, inst.m, size=config.steps)
    v = np.zeros_like(x)
    for i in idx:
        A = inst.A[i]
        res = np.trace(x.T @ A @ x) - inst.b[i]
        v = config.momentum * v - config.learning_rate * 4.0 * res * (A @ x)
        x = x + v
    return x


@pytest.fixture(scope="module")
def ex1():
    return example1_instance()


@pytest.mark.parametrize("rel,mode,ok", [
    (0.006, "success_below", True), (0.006, "failure_above", True),
    (0.0, "success_below", True), (0.51, "failure_above", False),
    (0.51, "success_below", False), (0.2, "failure_above", False),
    (np.inf, "success_below", False), (np.nan, "failure_above", False),
    (0.3, ("success_below", 0.5), True),
])
def test_classify(rel, mode, ok):
    assert classify(rel, mode) is ok


def test_single_trial_matches_scalar_loop(ex1):
    cfg = SgdConfig(1e-2, steps=200, master_seed=7)
    for t in (0, 5, 123):
        rec = sgd_run(ex1, cfg, t)
        assert np.allclose(rec.final_x, reference_trial(ex1, cfg, t), rtol=1e-12, atol=1e-14)


def test_results_do_not_depend_on_chunking(ex1):
    cfg = SgdConfig(1e-2, steps=100, master_seed=3)
    full = run_trials(ex1, cfg, 37)
    small = run_trials(ex1, cfg, 37, chunk=5)
    assert np.array_equal(full[1], small[1])
    assert np.array_equal(full[3], small[3])
    rec = sgd_run(ex1, cfg, 20)
    assert np.array_equal(rec.final_x, full[1][20])


def test_ground_truth_is_a_fixed_point(ex1):
    rec = sgd_run(ex1, SgdConfig(1e-2, steps=500), 0, x0=ex1.z)
    assert np.array_equal(rec.final_x, ex1.z)
    assert rec.final_abs_error == 0.0 and rec.succeeded
    # single-sample gradients are not zero at the spurious point, but they
    # never leave its axis, so the iterate cannot reach z from there
    rec = sgd_run(ex1, SgdConfig(1e-3, steps=200), 0, x0=EXAMPLE1_SPURIOUS)
    assert rec.final_x[0, 0] == 0.0 and not rec.succeeded


def test_ten_trials_at_truth(ex1):
    _, _, a, rl, dv, ok = run_trials(ex1, SgdConfig(1e-3, steps=50), 10, x0=ex1.z)
    rate = float(np.mean(~ok))
    assert rate == 0.0 and binomial_half_width(rate, 10) == 0.0


def test_divergence_is_recorded(ex1):
    rec = sgd_run(ex1, SgdConfig(5.0, momentum=0.0, steps=100), 0)
    assert rec.diverged and rec.final_abs_error == np.inf and not rec.succeeded
    assert np.all(np.isfinite(rec.final_x))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 1e3, allow_nan=False) | st.just(np.inf), min_size=1, max_size=200),
       st.floats(0.1, 10.0))
def test_histogram_keeps_every_trial(errs, zf):
    edges, counts = histogram(np.array(errs), zf)
    assert counts.sum() == len(errs)
    assert len(counts) == 100 and edges[-1] == pytest.approx(2 * zf)


def test_histogram_modes():
    edges = np.linspace(0, 10, 11)
    counts = np.array([0, 9, 2, 0, 0, 1, 0, 5, 1, 0])
    assert histogram_modes(edges, counts) == [1.5, 7.5]


def test_quantile_band_with_divergence():
    band = quantile_band([0.1, 0.2, np.inf])
    assert band["min"] == 0.1 and band["max"] == np.inf and band["median"] == 0.2


@pytest.mark.parametrize("kw", [dict(learning_rate=0.0), dict(learning_rate=1e-3, momentum=1.0),
                                dict(learning_rate=1e-3, steps=0), dict(learning_rate=1e-3, batch_size=4),
                                dict(learning_rate=1e-3, init_scheme="uniform"),
                                dict(learning_rate=1e-3, init_scheme="interpolated"),
                                dict(learning_rate=1e-3, init_scheme="interpolated", x_loc=[1.0, 0.0], gamma=2.0),
                                dict(learning_rate=1e-3, master_seed=-1)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SgdConfig(**kw)


def test_failure_rate_seed_stability(ex1):
    rates = [failure_rate_experiment(ex1, SgdConfig(1e-3, steps=1000, master_seed=s), 3000) for s in (0, 1)]
    p = 0.5 * (rates[0].failure_rate + rates[1].failure_rate)
    sigma = np.sqrt(2 * p * (1 - p) / 3000)
    assert abs(rates[0].failure_rate - rates[1].failure_rate) < 4 * sigma
    for r in rates:
        assert 0.08 <= r.failure_rate <= 0.16


def test_step_size_trend(ex1):
    # equal steps * learning_rate; a large step leaves iterates rattling around
    big = failure_rate_experiment(ex1, SgdConfig(1e-2, steps=100), 2000)
    mid = failure_rate_experiment(ex1, SgdConfig(1e-3, steps=1000), 2000)
    small = failure_rate_experiment(ex1, SgdConfig(1e-4, steps=10000), 2000)
    assert big.failure_rate > mid.failure_rate + 0.3
    assert big.between_count > 10 * mid.between_count
    # non-increasing as the step shrinks, within 3 sigma of the difference
    for hi, lo in ((big, mid), (mid, small)):
        p = 0.5 * (hi.failure_rate + lo.failure_rate)
        assert lo.failure_rate <= hi.failure_rate + 3 * np.sqrt(2 * p * (1 - p) / 2000)


def test_summary_json(tmp_path, ex1):
    s = failure_rate_experiment(ex1, SgdConfig(1e-3, steps=100), 50, csv_path=tmp_path / "t.csv")
    s.save(tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["trials"] == 50 and sum(doc["histogram"]["counts"]) == 50
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 51
    assert isinstance(s, ExperimentSummary)


@pytest.fixture(scope="module")
def forged():
    return forge_instance(4, 1, 0)


def test_forged_point_holds_nearby_starts(forged):
    inst, x_loc = forged.instance, forged.x
    cfg = SgdConfig(2e-5, steps=3000).with_gamma(0.05, x_loc)
    _, x, _, _, dv, _ = run_trials(inst, cfg, 100)
    assert not dv.any()
    drift = np.linalg.norm(x @ x.transpose(0, 2, 1) - x_loc @ x_loc.T, axis=(1, 2))
    gap = np.linalg.norm(x_loc @ x_loc.T - inst.Z)
    assert drift.max() < 0.25 * gap


def test_forged_point_is_a_trap_from_itself(forged):
    inst, x_loc = forged.instance, forged.x
    rel0 = np.linalg.norm(x_loc @ x_loc.T - inst.Z) / np.linalg.norm(inst.Z)
    # the spread around x_loc is stationary noise of size ~ sqrt(learning_rate)
    s = gamma_sweep(inst, x_loc, [0.0], SgdConfig(5e-6, steps=10000), 50)
    band = s.bands[0]
    assert abs(band["min"] - rel0) < 0.1 * rel0 and abs(band["max"] - rel0) < 0.1 * rel0


def test_gamma_sweep_shares_draws(forged, tmp_path):
    cfg = SgdConfig(2e-5, steps=1000)
    s = gamma_sweep(forged.instance, forged.x, [0.0, 0.5, 1.0], cfg, 20, csv_path=tmp_path / "g.csv")
    assert [b["gamma"] for b in s.bands] == [0.0, 0.5, 1.0]
    assert s.trials == 60
    one = gamma_sweep(forged.instance, forged.x, [0.5], cfg, 20)
    assert one.bands[0] == s.bands[1]
    with pytest.raises(ValueError):
        gamma_sweep(forged.instance, np.ones(4), [0.5], cfg, 5)
