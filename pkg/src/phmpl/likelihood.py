"""Log-likelihood, penalized objective, score and Hessian.

The model is ``h(t | x) = h0(t) exp(x beta)`` with ``h0(t) = sum_u theta_u psi_u(t)``.
Parameters are stacked as ``eta = (theta, beta)`` in every vector and matrix
returned here.

Basis values at the observed endpoints do not depend on the parameters, so
they are evaluated once into a :class:`Design` and reused.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .survdata import CensorKind, Dataset

ETA_CLAMP = 500.0
PROB_FLOOR = 1e-300
LOG_PROB_FLOOR = math.log(PROB_FLOOR)


@dataclass(frozen=True)
class ModelState:
    beta: np.ndarray
    theta: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        b = np.array(self.beta, dtype=float).reshape(-1)
        th = np.array(self.theta, dtype=float).reshape(-1)
        if np.any(th < 0):
            raise ValueError("theta must be nonnegative")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        b.setflags(write=False)
        th.setflags(write=False)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def eta(self) -> np.ndarray:
        return np.concatenate([self.theta, self.beta])


@dataclass(frozen=True, eq=False)
class Design:
    """Basis values at observed endpoints, split by censoring type.

    Suffixes: ``E`` events, ``R`` right, ``L`` left, ``I`` interval.
    For interval rows ``Psi_IL`` and ``Psi_IR`` are taken at the left and
    right endpoints.
    """

    system: object
    data: Dataset
    R: np.ndarray
    R_factor: np.ndarray
    psi_E: np.ndarray
    Psi_E: np.ndarray
    Psi_R: np.ndarray
    Psi_L: np.ndarray
    Psi_IL: np.ndarray
    Psi_IR: np.ndarray
    X_E: np.ndarray
    X_R: np.ndarray
    X_L: np.ndarray
    X_I: np.ndarray

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def p(self) -> int:
        return self.data.p

    @property
    def n(self) -> int:
        return self.data.n


def make_design(system, data: Dataset, R=None) -> Design:
    """Precompute basis values for ``data`` under ``system``.

    Endpoints outside the basis support use the natural extension (zero
    hazard, flat cumulative).
    """
    k = data.kind
    E = k == CensorKind.EVENT
    Rt = k == CensorKind.RIGHT
    L = k == CensorKind.LEFT
    I = k == CensorKind.INTERVAL
    tl, tr = data.t_left, data.t_right

    def cum(t):
        return system.cumulative(t, extrapolate=True) if t.size else np.zeros((0, system.m))

    def den(t):
        return system.basis(t, extrapolate=True) if t.size else np.zeros((0, system.m))

    if R is None:
        R, F = system.penalty, system.penalty_factor
    else:
        from .basis import factor_psd

        R = np.asarray(R, dtype=float)
        F = factor_psd(R)
    return Design(
        system=system,
        data=data,
        R=R,
        R_factor=F,
        psi_E=den(tl[E]),
        Psi_E=cum(tl[E]),
        Psi_R=cum(tl[Rt]),
        Psi_L=cum(tr[L]),
        Psi_IL=cum(tl[I]),
        Psi_IR=cum(tr[I]),
        X_E=data.X[E],
        X_R=data.X[Rt],
        X_L=data.X[L],
        X_I=data.X[I],
    )


@dataclass(frozen=True, eq=False)
class Evaluation:
    """Objective value and optional derivatives at one state.

    ``finite`` is False when the state is infeasible (a zero hazard at an
    event, a vanishing censoring probability, or a clamped linear predictor);
    then ``objective`` is ``-inf`` and the derivatives are None.

    ``mi_denominator`` holds the nonnegative gradient part used to scale the
    multiplicative update of theta (without the regularizing constant).
    """

    objective: float
    loglik: float
    roughness: float
    finite: bool
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None
    hess_loglik: np.ndarray | None = None
    mi_denominator: np.ndarray | None = None
    reason: str = field(default="")


def _infeasible(reason: str) -> Evaluation:
    return Evaluation(-math.inf, -math.inf, math.nan, False, reason=reason)


def evaluate(state: ModelState, design: Design, order: int = 1) -> Evaluation:
    """Evaluate the penalized objective and derivatives up to ``order`` (0, 1 or 2)."""
    th, be, lam = state.theta, state.beta, state.lam
    m, p = design.m, design.p
    if th.size != m:
        raise ValueError(f"theta has length {th.size}, basis has {m} functions")
    if be.size != p:
        raise ValueError(f"beta has length {be.size}, data has {p} covariates")

    lin = {}
    for key, X in (("E", design.X_E), ("R", design.X_R), ("L", design.X_L), ("I", design.X_I)):
        z = X @ be if p else np.zeros(X.shape[0])
        if np.any(np.abs(z) > ETA_CLAMP):
            return _infeasible("linear predictor outside clamp range")
        lin[key] = z

    # events
    zE = lin["E"]
    eE = np.exp(zE)
    h0E = design.psi_E @ th
    if np.any(h0E <= 0):
        return _infeasible("zero baseline hazard at an event time")
    HE = eE * (design.Psi_E @ th)
    # right censored
    eR = np.exp(lin["R"])
    HR_ = eR * (design.Psi_R @ th)
    # left censored
    eL = np.exp(lin["L"])
    HLc = eL * (design.Psi_L @ th)
    with np.errstate(divide="ignore"):
        logpL = np.log(-np.expm1(-HLc))
    if np.any(logpL < LOG_PROB_FLOOR):
        return _infeasible("left-censoring probability underflow")
    # interval censored
    eI = np.exp(lin["I"])
    HIL = eI * (design.Psi_IL @ th)
    HIR = eI * (design.Psi_IR @ th)
    dI = HIR - HIL
    with np.errstate(divide="ignore", invalid="ignore"):
        logpI = -HIL + np.log(-np.expm1(-dI))
    if np.any(~(logpI >= LOG_PROB_FLOOR)):
        return _infeasible("interval probability underflow")

    ll = float(np.sum(np.log(h0E)) + np.sum(zE) - np.sum(HE) - np.sum(HR_) + np.sum(logpL) + np.sum(logpI))
    Fth = design.R_factor @ th
    rough = float(Fth @ Fth)
    obj = ll - lam * rough
    if order == 0:
        return Evaluation(obj, ll, rough, True)

    # first derivatives
    Rth = design.R @ th
    with np.errstate(over="ignore"):
        gL = 1.0 / np.expm1(HLc)
        aI = 1.0 / (-np.expm1(-dI))
        bI = 1.0 / np.expm1(dI)
    gth = (
        design.psi_E.T @ (1.0 / h0E)
        - design.Psi_E.T @ eE
        - design.Psi_R.T @ eR
        + design.Psi_L.T @ (gL * eL)
        - design.Psi_IL.T @ (aI * eI)
        + design.Psi_IR.T @ (bI * eI)
        - 2.0 * lam * Rth
    )
    gbe = (
        design.X_E.T @ (1.0 - HE)
        - design.X_R.T @ HR_
        + design.X_L.T @ (gL * HLc)
        + design.X_I.T @ (-aI * HIL + bI * HIR)
    )
    grad = np.concatenate([gth, gbe])
    mi_den = (
        design.Psi_E.T @ eE
        + design.Psi_R.T @ eR
        + design.Psi_IL.T @ (aI * eI)
        + lam * np.maximum(2.0 * Rth, 0.0)
    )
    if order == 1:
        return Evaluation(obj, ll, rough, True, grad=grad, mi_denominator=mi_den)

    # second derivatives of the log-likelihood
    Htt = -(design.psi_E / h0E[:, None]).T @ (design.psi_E / h0E[:, None])
    gLp = -gL * (1.0 + gL)
    PL = design.Psi_L * eL[:, None]
    Htt += (PL * gLp[:, None]).T @ PL
    cI = aI * bI
    DI = (design.Psi_IR - design.Psi_IL) * eI[:, None]
    Htt -= (DI * cI[:, None]).T @ DI

    Hbb = -(design.X_E * HE[:, None]).T @ design.X_E
    Hbb -= (design.X_R * HR_[:, None]).T @ design.X_R
    Hbb += (design.X_L * (gLp * HLc ** 2 + gL * HLc)[:, None]).T @ design.X_L
    wI = -cI * dI ** 2 + (-aI * HIL + bI * HIR)
    Hbb += (design.X_I * wI[:, None]).T @ design.X_I

    # rows beta, columns theta
    Hbt = -(design.X_E * eE[:, None]).T @ design.Psi_E
    Hbt -= (design.X_R * eR[:, None]).T @ design.Psi_R
    Hbt += (design.X_L * (eL * (gLp * HLc + gL))[:, None]).T @ design.Psi_L
    VI = (cI * (HIL - HIR))[:, None] * (design.Psi_IR - design.Psi_IL) + (
        bI[:, None] * design.Psi_IR - aI[:, None] * design.Psi_IL)
    Hbt += (design.X_I * eI[:, None]).T @ VI

    Hll = np.empty((m + p, m + p))
    Hll[:m, :m] = Htt
    Hll[m:, m:] = Hbb
    Hll[m:, :m] = Hbt
    Hll[:m, m:] = Hbt.T
    Hll = 0.5 * (Hll + Hll.T)
    H = Hll.copy()
    H[:m, :m] -= 2.0 * lam * design.R
    return Evaluation(obj, ll, rough, True, grad=grad, hess=H, hess_loglik=Hll, mi_denominator=mi_den)


def _as_design(system, data, R=None) -> Design:
    if isinstance(data, Design):
        return data
    return make_design(system, data, R)


def baseline_hazard(state: ModelState, system, t) -> np.ndarray:
    """``h0(t) = psi(t) @ theta``."""
    th = np.asarray(state.theta)
    if th.size != system.m:
        raise ValueError(f"theta has length {th.size}, basis has {system.m} functions")
    return system.basis(t) @ th


def cumulative_baseline(state: ModelState, system, t) -> np.ndarray:
    """``H0(t) = Psi(t) @ theta``."""
    th = np.asarray(state.theta)
    if th.size != system.m:
        raise ValueError(f"theta has length {th.size}, basis has {system.m} functions")
    return system.cumulative(t) @ th


def survival(state: ModelState, system, x, t) -> np.ndarray:
    """``S(t | x) = exp(-H0(t) exp(x beta))`` with the linear predictor clamped."""
    z = float(np.dot(np.asarray(x, dtype=float).reshape(-1), state.beta)) if state.beta.size else 0.0
    z = min(max(z, -ETA_CLAMP), ETA_CLAMP)
    return np.exp(-cumulative_baseline(state, system, t) * math.exp(z))


def log_likelihood(state: ModelState, system, data) -> float:
    return evaluate(ModelState(state.beta, state.theta, 0.0), _as_design(system, data), order=0).loglik


def penalized_objective(state: ModelState, system, data, R=None) -> float:
    return evaluate(state, _as_design(system, data, R), order=0).objective


def score(state: ModelState, system, data, R=None) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the penalized objective as ``(grad_beta, grad_theta)``."""
    ev = evaluate(state, _as_design(system, data, R), order=1)
    if not ev.finite:
        raise ValueError(f"objective is not finite: {ev.reason}")
    m = system.m
    return ev.grad[m:], ev.grad[:m]


def hessian(state: ModelState, system, data, R=None) -> np.ndarray:
    """Hessian of the penalized objective in ``(theta, beta)`` order."""
    ev = evaluate(state, _as_design(system, data, R), order=2)
    if not ev.finite:
        raise ValueError(f"objective is not finite: {ev.reason}")
    return ev.hess
