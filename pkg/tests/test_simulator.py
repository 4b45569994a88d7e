import math

import numpy as np
import pytest
from scipy import integrate, stats

from phmpl.simulator import (
    Baseline,
    FitSpec,
    ScenarioConfig,
    censoring_repartition,
    generate_arrays,
    generate_sample,
    integrated_discrepancy,
    preset,
    run_replications,
    sample_event_time,
    scenario_percentiles,
)
from phmpl.survdata import classify_censoring


def test_sample_event_time_examples():
    assert sample_event_time(Baseline.LINEAR, np.zeros((1, 1)), [2.0], [math.exp(-2.0)])[0] == pytest.approx(2.0)
    assert sample_event_time(Baseline.QUADRATIC, np.zeros((1, 3)), [1, 1, 1], [math.exp(-1.0)])[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        sample_event_time(Baseline.LINEAR, np.zeros((1, 1)), [2.0], [0.0])
    with pytest.raises(ValueError):
        sample_event_time(Baseline.LINEAR, np.zeros((1, 1)), [2.0], [1.0])


@pytest.mark.parametrize("baseline", list(Baseline))
def test_event_times_follow_baseline_distribution(baseline):
    rng = np.random.default_rng(10)
    u = rng.random(100_000)
    y = sample_event_time(baseline, np.zeros((u.size, 1)), [0.0], u)
    ks = stats.kstest(y, lambda t: -np.expm1(-baseline.cumulative(t))).statistic
    assert ks < 0.01


@pytest.mark.parametrize("baseline", list(Baseline))
def test_cumulative_is_integral_of_hazard(baseline):
    for t in (0.01, 0.5, 1.3, 5.0):
        val, _ = integrate.quad(lambda s: float(baseline.hazard(s)), 0.0, t, epsabs=1e-13, epsrel=1e-13)
        assert float(baseline.cumulative(t)) == pytest.approx(val, rel=1e-10, abs=1e-14)
        assert float(baseline.inverse_cumulative(baseline.cumulative(t))) == pytest.approx(t, rel=1e-10)


def test_presets_match_design_table():
    s1, s2, s3 = preset(1), preset(2), preset(3)
    assert (s1.beta_true, s1.x_scales, s1.gamma_L, s1.gamma_R) == ((2.0,), (1.0,), 1.0, 1.0)
    assert (s2.beta_true, s2.x_scales, s2.gamma_L, s2.gamma_R) == ((0.75, -0.5, 0.25), (1.0, 5.0, 7.0), 0.9, 1.3)
    assert (s3.beta_true, s3.x_scales, s3.gamma_L, s3.gamma_R) == ((0.25, 0.25), (1.0, 7.0), 0.5, 1.1)
    assert s3.baseline is Baseline.LOGLOGISTIC
    with pytest.raises(ValueError):
        preset(4)


def test_config_validation_and_json_round_trip():
    c = preset(2, n=50, pi_event=0.3)
    assert ScenarioConfig.from_json(c.to_json()) == c
    with pytest.raises(ValueError):
        c.with_(pi_event=1.5)
    with pytest.raises(ValueError):
        c.with_(gamma_L=2.0)
    with pytest.raises(ValueError):
        c.with_(beta_true=(1.0,))


def test_all_events_when_event_proportion_is_one():
    d = generate_sample(preset(1, n=300, pi_event=1.0), np.random.default_rng(0))
    assert np.all(d.kind == 0)
    assert np.array_equal(d.t_left, d.t_right)


@pytest.mark.parametrize("sid", [1, 2, 3])
def test_generated_pairs_are_consistent(sid):
    cfg = preset(sid, n=2000, pi_event=0.25)
    X, y, tl, tr = generate_arrays(cfg, np.random.default_rng(sid))
    assert np.all(tl <= tr)
    assert np.all((tl <= y) & (y <= tr))
    d = generate_sample(cfg, np.random.default_rng(sid))
    for a, b, k in zip(d.t_left[:200], d.t_right[:200], d.kind[:200]):
        assert classify_censoring(a, b) == k
    frac = np.mean(d.kind == 0)
    assert abs(frac - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / cfg.n)


def test_censoring_repartition_sim1():
    rep = censoring_repartition(preset(1, n=100_000), np.random.default_rng(1))
    assert rep["left"] == pytest.approx(0.325, abs=0.02)
    assert rep["interval"] == pytest.approx(0.330, abs=0.02)
    assert rep["right"] == pytest.approx(0.345, abs=0.02)


def test_percentiles_are_cached_and_ordered():
    p = scenario_percentiles(preset(1))
    assert p["t1"] < p["t2"] < p["t3"] < p["t_star"]
    assert scenario_percentiles(preset(1, n=17)) is p


def test_integrated_discrepancy_oracles():
    h = Baseline.LINEAR.hazard
    assert integrated_discrepancy(h, h, 1.5) == 0.0
    assert integrated_discrepancy(lambda t: h(t) + 0.2, h, 1.5) == pytest.approx(0.3, rel=1e-12)
    # |t - 1| on [0, 2] has integral 1
    assert integrated_discrepancy(lambda t: np.ones_like(t), h, 2.0) == pytest.approx(1.0, abs=1e-5)


def test_single_replication_is_deterministic():
    cfg = preset(1, n=120)
    a = run_replications(cfg, FitSpec(), 1, seed=3)
    b = run_replications(cfg, FitSpec(), 1, seed=3)
    assert a.to_csv() == b.to_csv()
    rec = a.records[0]
    assert rec.status == "ok"
    assert a.beta[0].bias == rec.beta_hat[0] - 2.0
    assert a.beta[0].coverage in (0.0, 1.0)


def test_worker_count_does_not_change_results():
    cfg = preset(3, n=80)
    spec = FitSpec(lam=1.0)
    a = run_replications(cfg, spec, 4, seed=11, workers=1)
    b = run_replications(cfg, spec, 4, seed=11, workers=2)
    assert a.to_csv() == b.to_csv()
    assert repr(a.records) == repr(b.records)
    assert a.failures["non_psd"] + a.failures["no_solution"] + a.n_ok == 4


def test_metrics_table_shape():
    m = run_replications(preset(2, n=100), FitSpec(), 3, seed=1)
    text = m.format_table()
    for name in ("beta1", "beta2", "beta3", "h0(t1)", "h0(t2)", "h0(t3)", "D"):
        assert name in text
    lines = m.to_csv().splitlines()
    assert lines[0] == "parameter,true,bias,mc_sd,mean_se,coverage"
    assert len(lines) == 1 + 3 + 3 + 1
    for pm in m.beta + m.baseline:
        assert math.isnan(pm.coverage) or 0.0 <= pm.coverage <= 1.0
    assert m.mean_discrepancy >= 0 or math.isnan(m.mean_discrepancy)
