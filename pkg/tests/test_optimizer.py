import numpy as np
import pytest

from conftest import mixed_dataset
from phmpl.basis import basis_for_data
from phmpl.likelihood import ModelState, evaluate, make_design
from phmpl.optimizer import (
    FitOptions,
    boundary_eps,
    fit,
    initial_theta,
    kkt_residual,
    kkt_residual_from,
    mi_theta_step,
    newton_beta_step,
)
from phmpl.survdata import Dataset


def test_kkt_residual_from_handles_boundary():
    g = np.array([0.5, -2.0, 0.0, 1e-3])
    th = np.array([1.0, 0.0, 0.0])
    # theta[0] free: |0.5|; theta[1], theta[2] at the bound: positive part only; beta: |1e-3|
    assert kkt_residual_from(g, th, 1e-8) == 0.5
    g2 = np.array([0.0, -2.0, 0.3, 0.0])
    assert kkt_residual_from(g2, th, 1e-8) == 0.3


def test_fit_options_validation():
    with pytest.raises(ValueError):
        FitOptions(armijo_shrink=1.0)
    with pytest.raises(ValueError):
        FitOptions(kkt_tol=0.0)
    with pytest.raises(ValueError):
        FitOptions(max_outer_iter=0)


@pytest.mark.parametrize("family, lam", [("mspline", 0.0), ("mspline", 5.0), ("gaussian", 0.5), ("mspline", 1e4)])
def test_fit_ascends_and_certifies(family, lam):
    rng = np.random.default_rng(11)
    for _ in range(4):
        d = mixed_dataset(rng, 60, 2)
        s = basis_for_data(d, family, 4, 3)
        r = fit(d, s, lam)
        assert r.converged, r.flags
        assert np.all(np.diff(r.objective_trace) >= -1e-10 * np.maximum(1, np.abs(r.objective_trace[1:])))
        assert np.all(r.min_theta_trace >= 0)
        assert kkt_residual(r.state, s, d) < r.kkt_tol


def test_plain_and_accelerated_schemes_agree():
    rng = np.random.default_rng(5)
    d = mixed_dataset(rng, 50, 1)
    s = basis_for_data(d, "mspline", 3, 3)
    fast = fit(d, s, 0.1)
    slow = fit(d, s, 0.1, FitOptions(accelerate=False, max_outer_iter=20000))
    assert fast.converged and slow.converged
    assert fast.iterations <= slow.iterations
    assert fast.objective == pytest.approx(slow.objective, abs=1e-5)
    assert np.allclose(fast.state.beta, slow.state.beta, atol=1e-3)


def test_single_steps_keep_feasibility_and_ascend():
    rng = np.random.default_rng(2)
    d = mixed_dataset(rng, 40, 2)
    s = basis_for_data(d, "mspline", 3, 3)
    design = make_design(s, d)
    st = ModelState(np.zeros(2), initial_theta(design), 1.0)
    phi0 = evaluate(st, design, 0).objective
    opts = FitOptions()
    st1, ev1, w, _ = mi_theta_step(st, design, opts)
    assert np.all(st1.theta >= 0) and 0 < w <= 1
    assert ev1.objective >= phi0
    st2, ev2, w, _ = newton_beta_step(st1, design, opts)
    assert ev2.objective >= ev1.objective


def test_exponential_oracle():
    rng = np.random.default_rng(9)
    t = rng.exponential(1.7, 80)
    d = Dataset.from_intervals(t, t)
    s = basis_for_data(d, "mspline", 0, 1, origin=True)
    r = fit(d, s, 0.0)
    assert r.converged
    assert (s.basis([1.0]) @ r.state.theta)[0] == pytest.approx(t.size / t.sum(), rel=1e-6)


def test_active_constraint_detected():
    # events only early; a right-censored tail pushes late weights to zero at lam = 0
    t = np.array([0.1, 0.15, 0.2, 0.22, 0.3, 0.35, 0.4])
    d = Dataset.from_intervals(np.concatenate([t, [2.0, 2.5, 3.0]]), np.concatenate([t, [np.inf] * 3]))
    s = basis_for_data(d, "mspline", 3, 1)
    r = fit(d, s, 0.0)
    assert r.converged
    assert len(r.active_set) >= 1
    assert all(r.state.theta[u] <= r.boundary_eps for u in r.active_set)


def test_iteration_cap_reports_not_converged():
    rng = np.random.default_rng(4)
    d = mixed_dataset(rng, 50, 2)
    s = basis_for_data(d, "mspline", 4, 3)
    r = fit(d, s, 0.0, FitOptions(max_outer_iter=1, accelerate=False))
    assert not r.converged and r.iterations == 1
    assert r.kkt_residual >= r.kkt_tol


def test_infeasible_start_falls_back():
    rng = np.random.default_rng(4)
    d = mixed_dataset(rng, 30, 1)
    s = basis_for_data(d, "mspline", 3, 3)
    r = fit(d, s, 0.0, FitOptions(theta_init=np.zeros(s.m)))
    assert r.converged
    assert boundary_eps(r.state.theta) > 0
