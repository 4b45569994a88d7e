import math

import numpy as np
import pytest
from scipy import stats

from conftest import mixed_dataset
from phmpl.basis import basis_for_data
from phmpl.inference import (
    COND_LIMIT,
    InferenceError,
    PenalizedInformation,
    baseline_hazard_band,
    covariance_from_fit,
    predict_survival_band,
    regression_summary,
    sandwich_covariance,
    z_quantile,
)
from phmpl.optimizer import fit


def random_spd(rng, k):
    A = rng.normal(size=(k, k))
    return A @ A.T + k * np.eye(k)


def test_z_quantile():
    assert z_quantile(0.95) == 1.959964
    assert z_quantile(0.9) == pytest.approx(stats.norm.ppf(0.95), rel=1e-12)
    with pytest.raises(ValueError):
        z_quantile(1.0)


def test_sandwich_reduces_to_inverse_without_penalty():
    rng = np.random.default_rng(0)
    G = random_spd(rng, 6)
    R = random_spd(rng, 4)
    rep = sandwich_covariance(-G, R, 0.0)
    assert np.allclose(rep.cov_eta, np.linalg.inv(G), rtol=1e-10, atol=0)
    assert rep.psd


def test_sandwich_matches_explicit_formula_and_zero_pads():
    rng = np.random.default_rng(1)
    G = random_spd(rng, 6)
    R = random_spd(rng, 4)
    lam = 0.7
    active = (1, 3)
    rep = sandwich_covariance(-G, R, lam, active)
    free = [0, 2, 4, 5]
    F = G.copy()
    F[:4, :4] += 2 * lam * R
    Fi = np.linalg.inv(F[np.ix_(free, free)])
    expected = Fi @ G[np.ix_(free, free)] @ Fi
    assert np.allclose(rep.cov_eta[np.ix_(free, free)], expected, rtol=1e-10)
    for u in active:
        assert np.all(rep.cov_eta[u] == 0.0) and np.all(rep.cov_eta[:, u] == 0.0)
    assert rep.se_theta[1] == 0.0
    all_active = sandwich_covariance(-G[:4, :4], R, lam, (0, 1, 2, 3))
    assert np.all(all_active.cov_eta == 0.0)


def test_penalized_information_is_accurate_for_huge_penalty():
    rng = np.random.default_rng(2)
    G = random_spd(rng, 5)
    F = np.diff(np.eye(4), 2, axis=0)  # second differences; null space = linear sequences
    c = 1e9
    info = PenalizedInformation(G, F, c, np.arange(5), 4)
    direct = np.trace(np.linalg.solve(G + np.pad(c * F.T @ F, (0, 1)), np.pad(c * F.T @ F, (0, 1))))
    assert info.trace_penalty_ratio() == pytest.approx(direct, rel=1e-6)
    assert info.trace_penalty_ratio() <= 2.0 + 1e-9
    # a moderate penalty keeps the plain determinant accurate enough to serve as the oracle
    mod = PenalizedInformation(G, F, 1e3, np.arange(5), 4)
    A = G + np.pad(1e3 * F.T @ F, (0, 1))
    assert mod.logdet() == pytest.approx(np.linalg.slogdet(A)[1], rel=1e-12)


def test_singular_information_raises():
    G = np.zeros((3, 3))
    with pytest.raises(InferenceError) as exc:
        sandwich_covariance(-G, np.zeros((2, 2)), 0.0)
    assert exc.value.condition > COND_LIMIT or not math.isfinite(exc.value.condition)


@pytest.fixture(scope="module")
def fitted():
    rng = np.random.default_rng(8)
    d = mixed_dataset(rng, 120, 2, beta=[0.5, -0.3])
    s = basis_for_data(d, "mspline", 4, 3)
    r = fit(d, s, 1.0)
    assert r.converged
    return d, s, r, covariance_from_fit(r)


def test_regression_summary(fitted):
    d, s, r, cov = fitted
    summ = regression_summary(r, cov)
    assert [row.name for row in summ.rows] == ["x1", "x2"]
    for row, b, se in zip(summ.rows, r.state.beta, cov.se_beta):
        assert row.hazard_ratio == pytest.approx(math.exp(b))
        assert row.ci_low == pytest.approx(math.exp(b - z_quantile(0.95) * se))
        assert row.p_value == pytest.approx(2 * stats.norm.sf(abs(b / se)))
    text = summ.format_table()
    assert "HR 95% CI" in text and text.count("\n") == 2
    recs = summ.as_records()
    assert recs[0]["estimate"] == r.state.beta[0]


def test_hazard_band(fitted):
    d, s, r, cov = fitted
    a, b = s.support
    band = baseline_hazard_band(r, cov, s, np.linspace(a, b, 50))
    assert np.all(band.lower >= 0) and np.all(band.lower <= band.h0) and np.all(band.upper >= band.h0)
    psi = s.basis([0.5 * (a + b)])[0]
    var = psi @ cov.cov_theta @ psi
    mid = baseline_hazard_band(r, cov, s, [0.5 * (a + b)])
    assert mid.se[0] == pytest.approx(math.sqrt(var))


def test_survival_band(fitted):
    d, s, r, cov = fitted
    a, b = s.support
    band = predict_survival_band(r, cov, s, [0.0, 0.0], np.linspace(0.0, b, 40))
    assert band.survival[0] == 1.0 and band.degenerate[0]
    assert np.all(np.diff(band.survival) <= 0)
    ok = ~band.degenerate
    assert np.all(band.lower[ok] < band.survival[ok]) and np.all(band.survival[ok] < band.upper[ok])
    with pytest.raises(ValueError):
        predict_survival_band(r, cov, s, [0.0, 0.0], [b * 2])
    with pytest.raises(ValueError):
        predict_survival_band(r, cov, s, [0.0], [b / 2])


def test_survival_band_delta_method_matches_numeric_gradient(fitted):
    d, s, r, cov = fitted
    x = np.array([0.3, -0.2])
    t = 0.6 * s.support[1]
    eta = r.state.eta
    m = s.m

    def loglog(e):
        H0 = s.cumulative([t])[0] @ e[:m]
        return math.log(H0) + x @ e[m:]

    h = 1e-6
    g = np.array([(loglog(eta + h * np.eye(eta.size)[j]) - loglog(eta - h * np.eye(eta.size)[j])) / (2 * h)
                  for j in range(eta.size)])
    se = math.sqrt(g @ cov.cov_eta @ g)
    band = predict_survival_band(r, cov, s, x, [t])
    S = band.survival[0]
    z = z_quantile(0.95)
    assert band.lower[0] == pytest.approx(math.exp(-math.exp(math.log(-math.log(S)) + z * se)), rel=1e-6)
