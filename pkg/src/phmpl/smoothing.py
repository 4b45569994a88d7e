"""Smoothing parameter selection by Laplace-approximate marginal likelihood.

The roughness penalty corresponds to a normal prior on theta with precision
``R / sigma2`` where ``sigma2 = 1 / (2 lambda)``.  The fixed-point update

    sigma2 <- theta' R theta / (m - nu)

with ``nu`` the model degrees of freedom is alternated with penalized fits
until ``nu`` settles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .inference import InferenceError, PenalizedInformation
from .likelihood import make_design
from .optimizer import FitOptions, FitResult, fit

SIGMA2_FLOOR = 1e-10
SIGMA2_CAP = 1e10


class SmoothingError(RuntimeError):
    """Raised when the degrees of freedom saturate or the df matrix is singular."""


def exact_pair(sigma2: float) -> tuple[float, float]:
    """Return ``(sigma2', lam)`` with ``lam * 2 * sigma2' == 1`` exactly in floating point.

    ``sigma2'`` is the nearest such value to ``sigma2``, searched outward up
    to 64 units in the last place.
    """
    up = down = float(sigma2)
    for _ in range(65):
        for cand in (up, down):
            lam = 1.0 / (2.0 * cand)
            if lam * 2.0 * cand == 1.0:
                return cand, lam
        up = float(np.nextafter(up, math.inf))
        down = float(np.nextafter(down, 0.0))
    raise ArithmeticError(f"no exact reciprocal pair near {sigma2}")


def _beta_theta_to_theta_beta(M: np.ndarray, p: int) -> np.ndarray:
    """Reorder a square matrix from ``(beta, theta)`` to ``(theta, beta)`` blocks."""
    k = M.shape[0]
    perm = np.concatenate([np.arange(p, k), np.arange(p)])
    return M[np.ix_(perm, perm)]


def penalty_precision(R, sigma2: float, p: int) -> np.ndarray:
    """Prior precision ``Q`` in ``(theta, beta)`` order.

    Assembled as ``blockdiag(0_pp, R / sigma2)`` in ``(beta, theta)`` order and
    then permuted.
    """
    R = np.asarray(R, dtype=float)
    m = R.shape[0]
    Q = np.zeros((p + m, p + m))
    Q[p:, p:] = R / sigma2
    return _beta_theta_to_theta_beta(Q, p)


def _free(m: int, p: int, active_set) -> np.ndarray:
    mask = np.ones(m + p, dtype=bool)
    mask[list(active_set)] = False
    return np.flatnonzero(mask)


def model_df_direct(G_hat, R, sigma2: float, active_set=()) -> float:
    """Degrees of freedom by a plain solve with the explicitly assembled ``Q``.

    Reference form of :func:`model_df`; it loses accuracy when ``sigma2``
    is tiny.
    """
    G = np.asarray(G_hat, dtype=float)
    m = np.asarray(R).shape[0]
    p = G.shape[0] - m
    Q = penalty_precision(R, sigma2, p)
    f = _free(m, p, active_set)
    if f.size == 0:
        return 0.0
    A = (G + Q)[np.ix_(f, f)]
    B = Q[np.ix_(f, f)]
    try:
        return float(np.trace(np.linalg.solve(A, B)))
    except np.linalg.LinAlgError as exc:
        raise SmoothingError(f"degrees-of-freedom matrix is singular: {exc}") from None


def model_df(G_hat, R, sigma2: float, active_set=(), R_factor=None) -> float:
    """Degrees of freedom ``tr{(U'(G + Q)U)^{-1} U'QU}``.

    ``G_hat`` is the negative log-likelihood Hessian in ``(theta, beta)``
    order; ``active_set`` lists theta indices removed by ``U``.  The trace
    is computed in penalty-eigenvector coordinates so that it stays
    accurate for very small ``sigma2``.
    """
    from .basis import factor_psd

    G = np.asarray(G_hat, dtype=float)
    m = np.asarray(R).shape[0]
    p = G.shape[0] - m
    f = _free(m, p, active_set)
    if f.size == 0:
        return 0.0
    Rf = factor_psd(R) if R_factor is None else R_factor
    info = PenalizedInformation(G, Rf, 1.0 / sigma2, f, m)
    try:
        return info.trace_penalty_ratio()
    except InferenceError as exc:
        raise SmoothingError(f"degrees-of-freedom matrix is singular: {exc}") from None


def sigma2_update(theta_hat, R, nu: float) -> tuple[float, str]:
    """``theta' R theta / (m - nu)`` clipped to ``[1e-10, 1e10]``.

    Returns the value and a flag: ``""``, ``"floor"`` for a zero numerator,
    or ``"clipped"``.
    """
    th = np.asarray(theta_hat, dtype=float)
    R = np.asarray(R, dtype=float)
    m = th.size
    if nu >= m - 1e-6:
        raise SmoothingError(f"penalty saturated: nu = {nu:.6g} with m = {m}")
    num = float(th @ R @ th)
    if num <= 0:
        return SIGMA2_FLOOR, "floor"
    val = num / (m - nu)
    if val < SIGMA2_FLOOR:
        return SIGMA2_FLOOR, "clipped"
    if val > SIGMA2_CAP:
        return SIGMA2_CAP, "clipped"
    return val, ""


def laplace_marginal_loglik(fitres: FitResult, sigma2: float) -> float:
    """Laplace approximation of the log marginal likelihood of ``sigma2``.

    Constraint-active coordinates are projected out of the log determinant.
    """
    ev = fitres.evaluation
    m, p = fitres.design.m, fitres.design.p
    f = _free(m, p, fitres.active_set)
    info = PenalizedInformation(-ev.hess_loglik, fitres.design.R_factor, 1.0 / sigma2, f, m)
    logdet = info.logdet()
    if math.isnan(logdet):
        return math.nan
    return -0.5 * m * math.log(sigma2) + ev.loglik - ev.roughness / (2.0 * sigma2) - 0.5 * logdet


@dataclass(frozen=True)
class SmoothingOptions:
    """Settings for the automatic smoothing loop.

    ``fit_options`` configures every inner fit; each fit after the first
    starts from the previous solution.
    """

    lam_init: float = 1.0
    df_tol: float = 1e-2
    max_smooth_iter: int = 50
    fit_options: FitOptions = field(default_factory=FitOptions)
    warm_start: bool = True

    def __post_init__(self):
        if not self.lam_init > 0:
            raise ValueError("lam_init must be positive")
        if not self.df_tol > 0:
            raise ValueError("df_tol must be positive")
        if self.max_smooth_iter < 1:
            raise ValueError("max_smooth_iter must be >= 1")


@dataclass(frozen=True)
class SmoothingState:
    sigma2: float
    lam: float
    nu: float
    iteration: int
    marginal_loglik: float = math.nan
    flag: str = ""


@dataclass(frozen=True, eq=False)
class AutoFitResult:
    fit: FitResult
    state: SmoothingState
    trace: tuple[SmoothingState, ...]
    stabilized: bool
    flags: tuple[str, ...] = ()

    @property
    def iterations(self) -> int:
        return len(self.trace)


def auto_fit(data, system, opts: SmoothingOptions | None = None) -> AutoFitResult:
    """Alternate penalized fits and ``sigma2`` updates until ``nu`` stabilizes.

    Returns the fit at the smoothing value whose degrees of freedom agreed
    with the previous iteration to ``df_tol``.  If that never happens, the
    iterate with the largest approximate marginal likelihood is returned and
    ``stabilized`` is False.
    """
    opts = opts or SmoothingOptions()
    design = make_design(system, data)
    m = design.m
    sigma2, lam = exact_pair(1.0 / (2.0 * opts.lam_init))
    fopts = opts.fit_options
    trace: list[SmoothingState] = []
    fits: list[FitResult] = []
    flags: list[str] = []
    nu_old = None
    stabilized = False
    for it in range(1, opts.max_smooth_iter + 1):
        res = fit(data, system, lam, fopts, design=design)
        if not res.converged:
            flags.append(f"{it}:fit_not_converged")
        nu = model_df(-res.evaluation.hess_loglik, design.R, sigma2, res.active_set, design.R_factor)
        ml = laplace_marginal_loglik(res, sigma2)
        fits.append(res)
        state = SmoothingState(sigma2, lam, nu, it, ml)
        if nu_old is not None and abs(nu - nu_old) < opts.df_tol:
            trace.append(state)
            stabilized = True
            break
        nu_old = nu
        try:
            new_sigma2, fl = sigma2_update(res.state.theta, design.R, nu)
        except SmoothingError:
            new_sigma2, fl = SIGMA2_CAP, "saturated"
        trace.append(replace(state, flag=fl))
        if fl:
            flags.append(f"{it}:{fl}")
        sigma2, lam = exact_pair(new_sigma2)
        if opts.warm_start:
            fopts = replace(opts.fit_options, theta_init=res.state.theta, beta_init=res.state.beta)

    if stabilized:
        best = len(fits) - 1
    else:
        flags.append("not_stabilized")
        mls = np.array([s.marginal_loglik for s in trace])
        best = int(np.nanargmax(mls)) if np.any(np.isfinite(mls)) else len(fits) - 1
    return AutoFitResult(fits[best], trace[best], tuple(trace), stabilized, tuple(flags))
