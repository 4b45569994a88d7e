"""Asymptotic inference at a constrained MPL solution.

The covariance of ``eta = (theta, beta)`` is the sandwich
``F~^{-1} G F~^{-1}`` where ``G`` is the negative log-likelihood Hessian and
``F = G + 2 lambda R`` on the theta block.  Coordinates of theta held at the
boundary by the nonnegativity constraint are removed before inversion and
their rows and columns of the covariance are set to zero.

The matrices are used unscaled; dividing both by ``n`` and the product by
``n`` gives the same covariance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .optimizer import FitResult

Z95 = 1.959964
COND_LIMIT = 1e14


class InferenceError(RuntimeError):
    """Raised when the information matrix on the free coordinates is singular."""

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition number {condition:.3g})")
        self.condition = condition


def z_quantile(level: float) -> float:
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if level == 0.95:
        return Z95
    return float(special.ndtri(0.5 + level / 2.0))


def detect_active(theta, grad_theta, eps: float) -> tuple[int, ...]:
    """Indices with ``theta_u <= eps`` and a strictly negative gradient."""
    theta = np.asarray(theta, dtype=float)
    grad_theta = np.asarray(grad_theta, dtype=float)
    return tuple(int(u) for u in np.flatnonzero((theta <= eps) & (grad_theta < 0)))


@dataclass(frozen=True, eq=False)
class CovarianceReport:
    """Covariance of ``(theta, beta)`` with zero rows and columns at active coordinates."""

    cov_eta: np.ndarray
    active_set: tuple[int, ...]
    m: int
    p: int
    condition: float

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.m + self.p, dtype=bool)
        mask[list(self.active_set)] = False
        return np.flatnonzero(mask)

    @property
    def cov_theta(self) -> np.ndarray:
        return self.cov_eta[:self.m, :self.m]

    @property
    def cov_beta(self) -> np.ndarray:
        return self.cov_eta[self.m:, self.m:]

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.cov_eta)

    @property
    def se_eta(self) -> np.ndarray:
        v = self.variances
        with np.errstate(invalid="ignore"):
            return np.where(v >= 0, np.sqrt(np.abs(v)), np.nan)

    @property
    def se_theta(self) -> np.ndarray:
        return self.se_eta[:self.m]

    @property
    def se_beta(self) -> np.ndarray:
        return self.se_eta[self.m:]

    @property
    def psd(self) -> bool:
        """Whether the free block is positive semidefinite up to ``1e-8`` of its scale."""
        f = self.free
        if f.size == 0:
            return True
        C = self.cov_eta[np.ix_(f, f)]
        ev = np.linalg.eigvalsh(0.5 * (C + C.T))
        return bool(ev.min() >= -1e-8 * max(np.abs(ev).max(), 1e-300))


class PenalizedInformation:
    """``A = G + c R`` on the free coordinates, held in a well-conditioned form.

    The free theta block is rotated onto the right singular vectors of the
    penalty factor (``R = F'F``) so the penalty becomes diagonal, and the
    rotated matrix is scaled to unit diagonal.  This keeps inverses,
    traces and determinants accurate when ``c`` is very large and ``A`` is
    nearly singular in the original coordinates.

    Parameters
    ----------
    G : (m + p, m + p) array
        Information matrix in ``(theta, beta)`` order.
    R_factor : (k, m) array
        Any factor with ``R = R_factor' R_factor``.
    c : float
        Penalty weight.
    free : index array
        Free coordinates in ``(theta, beta)`` order.
    m : int
        Number of theta coordinates.
    """

    def __init__(self, G, R_factor, c: float, free, m: int):
        G = np.asarray(G, dtype=float)
        free = np.asarray(free, dtype=int)
        fth = free[free < m]
        fbe = free[free >= m]
        q, pb = fth.size, fbe.size
        if q:
            _, sv, Vt = np.linalg.svd(np.asarray(R_factor, dtype=float)[:, fth], full_matrices=True)
            pen = np.zeros(q)
            pen[:sv.size] = sv[:q] ** 2
            V = Vt.T
        else:
            pen = np.zeros(0)
            V = np.zeros((0, 0))
        T = np.zeros((q + pb, q + pb))
        T[:q, :q] = V
        T[q:, q:] = np.eye(pb)
        self.T = T
        self.penalty_diag = np.concatenate([c * pen, np.zeros(pb)])
        Gf = G[np.ix_(free, free)]
        self.G_rot = T.T @ Gf @ T
        A = self.G_rot + np.diag(self.penalty_diag)
        A = 0.5 * (A + A.T)
        d = np.sqrt(np.abs(np.diag(A)))
        d[d == 0] = 1.0
        self.d = d
        self.A_scaled = A / np.outer(d, d)
        self.condition = float(np.linalg.cond(self.A_scaled)) if A.size else 1.0

    def _check(self):
        if not np.isfinite(self.condition) or self.condition > COND_LIMIT:
            raise InferenceError("information matrix on free coordinates is singular", self.condition)

    def inverse_rotated(self) -> np.ndarray:
        self._check()
        Ainv = np.linalg.inv(self.A_scaled)
        return Ainv / np.outer(self.d, self.d)

    def sandwich(self) -> np.ndarray:
        """``A^{-1} G A^{-1}`` back in the original free coordinates."""
        Ainv = self.inverse_rotated()
        C = Ainv @ self.G_rot @ Ainv
        C = self.T @ C @ self.T.T
        return 0.5 * (C + C.T)

    def trace_penalty_ratio(self) -> float:
        """``tr(A^{-1} c R)``."""
        Ainv = self.inverse_rotated()
        return float(np.sum(np.diag(Ainv) * self.penalty_diag))

    def logdet(self) -> float:
        """``log|A|``, or NaN when ``A`` is not positive definite."""
        sign, ld = np.linalg.slogdet(self.A_scaled)
        if sign <= 0:
            return math.nan
        return float(ld + 2.0 * np.sum(np.log(self.d)))


def sandwich_covariance(hessian_ll, R, lam: float, active_set=(), n: int | None = None,
                        R_factor=None) -> CovarianceReport:
    """Sandwich covariance from the log-likelihood Hessian in ``(theta, beta)`` order.

    Parameters
    ----------
    hessian_ll : (m + p, m + p) array
        Hessian of the log-likelihood (without penalty).
    R : (m, m) array
        Roughness matrix.
    lam : float
        Smoothing parameter.
    active_set : sequence of int
        Theta indices at an active nonnegativity constraint.
    n : int, optional
        Sample size.  Accepted for interface symmetry; the result does not
        depend on it.
    R_factor : array, optional
        Factor with ``R = R_factor' R_factor``; computed from ``R`` if omitted.
    """
    from .basis import factor_psd

    H = np.asarray(hessian_ll, dtype=float)
    R = np.asarray(R, dtype=float)
    m = R.shape[0]
    k = H.shape[0]
    active = tuple(sorted(int(u) for u in active_set))
    mask = np.ones(k, dtype=bool)
    mask[list(active)] = False
    free = np.flatnonzero(mask)
    cov = np.zeros((k, k))
    if free.size == 0:
        return CovarianceReport(cov, active, m, k - m, 1.0)
    Rf = factor_psd(R) if R_factor is None else R_factor
    info = PenalizedInformation(-H, Rf, 2.0 * lam, free, m)
    cov[np.ix_(free, free)] = info.sandwich()
    return CovarianceReport(cov, active, m, k - m, info.condition)


def covariance_from_fit(fit: FitResult) -> CovarianceReport:
    ev = fit.evaluation
    d = fit.design
    return sandwich_covariance(ev.hess_loglik, d.R, fit.state.lam, fit.active_set, d.n, R_factor=d.R_factor)


@dataclass(frozen=True)
class CoefficientRow:
    name: str
    estimate: float
    se: float
    hazard_ratio: float
    ci_low: float
    ci_high: float
    z: float
    p_value: float


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _fmt_p(pv: float) -> str:
    if not math.isfinite(pv):
        return "nan"
    return "<0.0001" if pv < 1e-4 else f"{pv:.4f}"


@dataclass(frozen=True)
class RegressionSummary:
    rows: tuple[CoefficientRow, ...]
    level: float = 0.95

    def format_table(self) -> str:
        pct = f"{100 * self.level:g}%"
        header = f"{'covariate':<16}{'estimate':>12}{'SE':>12}{'HR':>12}  {'HR ' + pct + ' CI':<26}{'p-value':>10}"
        lines = [header]
        for r in self.rows:
            ci = f"[{_fmt(r.ci_low)}; {_fmt(r.ci_high)}]"
            lines.append(
                f"{r.name:<16}{_fmt(r.estimate):>12}{_fmt(r.se):>12}{_fmt(r.hazard_ratio):>12}  {ci:<26}{_fmt_p(r.p_value):>10}"
            )
        return "\n".join(lines)

    def as_records(self) -> list[dict]:
        return [r.__dict__.copy() for r in self.rows]


def regression_summary(fit: FitResult, cov: CovarianceReport, names=None, level: float = 0.95) -> RegressionSummary:
    """Hazard ratios with Wald intervals and two-sided p-values."""
    beta = fit.state.beta
    names = list(names) if names is not None else list(fit.design.data.covariate_names)
    z = z_quantile(level)
    rows = []
    for j, b in enumerate(beta):
        se = float(cov.se_beta[j])
        zs = b / se if se > 0 else (math.copysign(math.inf, b) if b != 0 else math.nan)
        pv = float(2.0 * special.ndtr(-abs(zs))) if not math.isnan(zs) else math.nan
        rows.append(CoefficientRow(
            name=names[j],
            estimate=float(b),
            se=se,
            hazard_ratio=math.exp(b),
            ci_low=math.exp(b - z * se),
            ci_high=math.exp(b + z * se),
            z=float(zs),
            p_value=pv,
        ))
    return RegressionSummary(tuple(rows), level)


@dataclass(frozen=True, eq=False)
class HazardBand:
    t: np.ndarray
    h0: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def baseline_hazard_band(fit: FitResult, cov: CovarianceReport, system, grid, level: float = 0.95) -> HazardBand:
    """Pointwise band ``h0 +/- z * se`` with the lower limit truncated at zero."""
    t = np.asarray(grid, dtype=float).reshape(-1)
    psi = system.basis(t)
    h0 = psi @ fit.state.theta
    var = np.einsum("ij,jk,ik->i", psi, cov.cov_theta, psi)
    se = np.sqrt(np.maximum(var, 0.0))
    z = z_quantile(level)
    return HazardBand(t, h0, se, np.maximum(h0 - z * se, 0.0), h0 + z * se)


@dataclass(frozen=True, eq=False)
class SurvivalBand:
    t: np.ndarray
    survival: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    degenerate: np.ndarray


def predict_survival_band(fit: FitResult, cov: CovarianceReport, system, x, grid, level: float = 0.95) -> SurvivalBand:
    """Survival curve for covariate profile ``x`` with a log(-log) delta-method band.

    Times between zero and the lower support boundary have zero cumulative
    hazard.  Where the survival estimate is numerically 0 or 1 the band
    collapses onto the estimate and ``degenerate`` is set.
    """
    t = np.asarray(grid, dtype=float).reshape(-1)
    a, b = system.support
    if np.any(t < 0) or np.any(t > b):
        raise ValueError(f"prediction times must lie in [0, {b}]")
    x = np.asarray(x, dtype=float).reshape(-1)
    beta, theta = fit.state.beta, fit.state.theta
    if x.size != beta.size:
        raise ValueError(f"covariate profile has length {x.size}, model has {beta.size}")
    Psi = system.cumulative(t, extrapolate=True)
    H0 = Psi @ theta
    lp = float(x @ beta) if x.size else 0.0
    H = H0 * math.exp(lp)
    S = np.exp(-H)
    z = z_quantile(level)
    degenerate = (H0 <= 0) | (S <= 0) | (S >= 1)
    lo = S.copy()
    hi = S.copy()
    ok = ~degenerate
    if np.any(ok):
        grad = np.concatenate([Psi[ok] / H0[ok, None], np.broadcast_to(x, (ok.sum(), x.size))], axis=1)
        var = np.einsum("ij,jk,ik->i", grad, cov.cov_eta, grad)
        se = np.sqrt(np.maximum(var, 0.0))
        g = np.log(H[ok])
        lo[ok] = np.exp(-np.exp(g + z * se))
        hi[ok] = np.exp(-np.exp(g - z * se))
    return SurvivalBand(t, S, lo, hi, degenerate)
