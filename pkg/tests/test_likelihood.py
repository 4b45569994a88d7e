import math

import numpy as np
import pytest

from conftest import feasible_theta, mixed_dataset
from phmpl.basis import KnotSequence, MSplineBasis, basis_for_data
from phmpl.likelihood import (
    ModelState,
    baseline_hazard,
    cumulative_baseline,
    evaluate,
    hessian,
    log_likelihood,
    make_design,
    penalized_objective,
    score,
    survival,
)
from phmpl.survdata import Dataset


def fd_gradient(f, x, h=1e-6):
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h * max(1.0, abs(x[j]))
        g[j] = (f(x + e) - f(x - e)) / (2 * e[j])
    return g


@pytest.mark.parametrize("family", ["mspline", "gaussian"])
def test_score_and_hessian_match_finite_differences(family):
    rng = np.random.default_rng(7)
    for _ in range(5):
        data = mixed_dataset(rng, 30, 2)
        system = basis_for_data(data, family, 3, 3)
        design = make_design(system, data)
        m = system.m
        eta = np.concatenate([feasible_theta(rng, m), rng.normal(scale=0.3, size=2)])
        lam = 0.3

        def phi(e):
            return evaluate(ModelState(e[m:], np.maximum(e[:m], 0), lam), design, 0).objective

        def grad(e):
            return evaluate(ModelState(e[m:], e[:m], lam), design, 1).grad

        ev = evaluate(ModelState(eta[m:], eta[:m], lam), design, 2)
        g_fd = fd_gradient(phi, eta)
        assert np.max(np.abs(ev.grad - g_fd)) <= 1e-6 * max(1.0, np.max(np.abs(g_fd)))
        H_fd = np.column_stack([fd_gradient(lambda e: grad(e)[k], eta) for k in range(eta.size)]).T
        assert np.max(np.abs(ev.hess - H_fd)) <= 1e-4 * max(1.0, np.max(np.abs(H_fd)))


def test_single_subject_closed_forms():
    # constant hazard c on [0, 2]; each censoring type has an explicit log-likelihood
    s = MSplineBasis(KnotSequence([0.0, 1.0, 2.0]), 1)
    c, b = 0.7, 0.3
    x = 1.5
    e = math.exp(b * x)
    cases = {
        (1.2, 1.2): math.log(c) + b * x - c * 1.2 * e,
        (0.0, 0.8): math.log(1 - math.exp(-c * 0.8 * e)),
        (0.5, math.inf): -c * 0.5 * e,
        (0.5, 1.5): math.log(math.exp(-c * 0.5 * e) - math.exp(-c * 1.5 * e)),
    }
    st = ModelState([b], [c, c])  # psi = 1 on each unit span
    for (tl, tr), expected in cases.items():
        d = Dataset.from_intervals([tl, 1.0], [tr, 1.0], [[x], [0.0]])
        # the second subject is an event at t = 1 with x = 0
        ll = log_likelihood(st, s, d) - (math.log(c) - c * 1.0)
        assert ll == pytest.approx(expected, rel=1e-12)


def test_penalty_enters_objective():
    rng = np.random.default_rng(3)
    d = mixed_dataset(rng, 20, 1)
    s = basis_for_data(d, "mspline", 2, 3)
    th = feasible_theta(rng, s.m)
    a = penalized_objective(ModelState([0.1], th, 0.0), s, d)
    b = penalized_objective(ModelState([0.1], th, 2.0), s, d)
    assert a - b == pytest.approx(2.0 * th @ s.penalty @ th, rel=1e-10)
    gb, gt = score(ModelState([0.1], th, 2.0), s, d)
    assert gb.shape == (1,) and gt.shape == (s.m,)
    assert hessian(ModelState([0.1], th, 2.0), s, d).shape == (s.m + 1, s.m + 1)


def test_infeasible_states_are_flagged():
    d = Dataset.from_intervals([1.0, 2.0], [1.0, 2.0], [[0.0], [1.0]])
    s = MSplineBasis(KnotSequence([1.0, 1.5, 2.0]), 1)
    ev = evaluate(ModelState([0.0], [0.0, 1.0]), make_design(s, d), 2)
    assert not ev.finite and ev.objective == -math.inf and ev.grad is None
    ev = evaluate(ModelState([600.0], [1.0, 1.0]), make_design(s, d), 1)
    assert not ev.finite and "clamp" in ev.reason
    d2 = Dataset.from_intervals([0.0, 1.2], [1.1, 1.2])
    s2 = MSplineBasis(KnotSequence([1.1, 1.15, 1.2]), 1)
    ev = evaluate(ModelState([], [0.0, 1.0]), make_design(s2, d2), 1)
    assert not ev.finite
    with pytest.raises(ValueError):
        ModelState([0.0], [-1.0, 1.0])


def test_hazard_cumulative_survival():
    s = MSplineBasis(KnotSequence([0.0, 1.0, 2.0]), 1)
    st = ModelState([math.log(2.0)], [1.0, 3.0])
    assert baseline_hazard(st, s, [0.5, 1.5]).tolist() == [1.0, 3.0]
    assert cumulative_baseline(st, s, [2.0]).tolist() == [4.0]
    assert survival(st, s, [1.0], [2.0])[0] == pytest.approx(math.exp(-8.0))
    assert survival(st, s, [1.0], [0.0])[0] == 1.0
    with pytest.raises(ValueError):
        baseline_hazard(ModelState([0.0], [1.0]), s, [0.5])
