"""Constrained maximum penalized likelihood by alternating Newton and MI steps.

Each outer iteration takes a damped Newton step in ``beta`` and then a
multiplicative-iterative (MI) step in ``theta``.  The MI step
``theta + omega * (theta / d) * grad`` keeps ``theta >= 0`` for every
``omega`` in ``(0, 1]`` because ``d`` dominates the negative part of the
gradient.  Both step sizes come from Armijo backtracking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .likelihood import Design, Evaluation, ModelState, evaluate, make_design

MAX_HALVINGS = 50


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    ``kkt_tol=None`` selects the scale-free default ``1e-6 * (1 + |Phi| / n)``
    evaluated at the current iterate.  ``theta_init`` is either ``"median"``
    (uniform weights scaled so the baseline cumulative hazard at the median
    endpoint equals ``log 2``) or an explicit vector; ``beta_init`` is a
    vector or None for zeros.

    With ``accelerate=True`` every outer iteration ends with a projected
    Newton step on the free coordinates of ``(theta, beta)``, kept only when
    it passes the same Armijo test.  Ascent and feasibility are unaffected;
    the plain alternating scheme is recovered with ``accelerate=False``.
    """

    max_outer_iter: int = 5000
    kkt_tol: float | None = None
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    xi: float = 1e-6
    theta_init: object = "median"
    beta_init: object = None
    boundary_rel: float = 1e-8
    accelerate: bool = True

    def __post_init__(self):
        if self.kkt_tol is not None and not self.kkt_tol > 0:
            raise ValueError("kkt_tol must be positive")
        if not 0 < self.armijo_shrink < 1:
            raise ValueError("armijo_shrink must lie in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if self.xi < 0:
            raise ValueError("xi must be nonnegative")
        if self.max_outer_iter < 1:
            raise ValueError("max_outer_iter must be >= 1")


@dataclass(frozen=True, eq=False)
class FitResult:
    state: ModelState
    converged: bool
    iterations: int
    objective_trace: np.ndarray
    min_theta_trace: np.ndarray
    kkt_residual: float
    kkt_tol: float
    active_set: tuple[int, ...]
    boundary_eps: float
    evaluation: Evaluation = field(repr=False)
    design: Design = field(repr=False)
    flags: tuple[str, ...] = ()

    @property
    def objective(self) -> float:
        return self.evaluation.objective


def boundary_eps(theta, rel: float = 1e-8) -> float:
    return rel * max(1.0, float(np.max(theta)) if np.size(theta) else 1.0)


def kkt_residual_from(grad: np.ndarray, theta: np.ndarray, eps: float) -> float:
    """KKT violation given the full gradient in ``(theta, beta)`` order."""
    m = theta.size
    gth, gbe = grad[:m], grad[m:]
    at = theta <= eps
    parts = [
        np.abs(gbe),
        np.abs(gth[~at]),
        np.maximum(gth[at], 0.0),
    ]
    return float(max((np.max(v) for v in parts if v.size), default=0.0))


def penalty_gradient_floor(absR: np.ndarray, theta: np.ndarray, lam: float) -> float:
    """Round-off level of the penalty gradient ``2 lam R theta``.

    Representing theta in floating point perturbs ``R theta`` by about
    ``m * eps * |R||theta|``; for very large ``lam`` this exceeds any fixed
    gradient tolerance, so it is added to the stopping threshold.
    """
    if lam == 0 or theta.size == 0:
        return 0.0
    return float(2.0 * lam * theta.size * np.finfo(float).eps * np.max(absR @ theta))


def kkt_residual(state: ModelState, system, data, R=None, rel: float = 1e-8) -> float:
    design = data if isinstance(data, Design) else make_design(system, data, R)
    ev = evaluate(state, design, order=1)
    if not ev.finite:
        return math.inf
    return kkt_residual_from(ev.grad, state.theta, boundary_eps(state.theta, rel))


def initial_theta(design: Design) -> np.ndarray:
    """Uniform weights scaled so the cumulative hazard at the pooled median is ``log 2``."""
    from .survdata import endpoint_pool

    pool = endpoint_pool(design.data)
    a, b = design.system.support
    tmed = float(np.clip(np.median(pool), a, b))
    s = float(np.sum(design.system.cumulative([tmed])))
    if s <= 0:
        s = float(np.sum(design.system.cumulative([b])))
    return np.full(design.m, math.log(2.0) / s)


def _armijo(design: Design, phi0: float, slope: float, trial, opts: FitOptions):
    """Backtrack from a unit step; returns ``(omega, evaluation, state)`` or None."""
    omega = 1.0
    for _ in range(MAX_HALVINGS + 1):
        st = trial(omega)
        ev = evaluate(st, design, order=0)
        if ev.finite and ev.objective >= phi0 + opts.armijo_c * omega * slope:
            return omega, ev, st
        omega *= opts.armijo_shrink
    return None


def _ridge_solve(A: np.ndarray, g: np.ndarray) -> np.ndarray | None:
    """Solve ``A d = g`` for positive definite ``A``, adding ridge if needed."""
    try:
        L = np.linalg.cholesky(A)
        return np.linalg.solve(L.T, np.linalg.solve(L, g))
    except np.linalg.LinAlgError:
        pass
    base = max(float(np.trace(A)) / A.shape[0], 1e-300)
    r = 1e-8
    while r <= 1e-2 * (1 + 1e-12):
        try:
            L = np.linalg.cholesky(A + r * base * np.eye(A.shape[0]))
            return np.linalg.solve(L.T, np.linalg.solve(L, g))
        except np.linalg.LinAlgError:
            r *= 10.0
    return None


def newton_beta_step(state: ModelState, design: Design, opts: FitOptions, ev: Evaluation | None = None):
    """One Armijo-damped Newton step in ``beta``.

    Returns ``(state, evaluation, omega, flag)``; on line-search failure the
    state is unchanged and ``omega`` is 0.
    """
    m = design.m
    if design.p == 0:
        return state, ev, 0.0, ""
    if ev is None or ev.hess is None:
        ev = evaluate(state, design, order=2)
    g = ev.grad[m:]
    A = -ev.hess[m:, m:]
    d = _ridge_solve(A, g)
    flag = ""
    if d is None:
        d = g / max(1.0, float(np.max(np.abs(g))))
        flag = "gradient_step"
    slope = float(g @ d)
    if not np.all(np.isfinite(d)):
        return state, ev, 0.0, "no_ascent_direction"
    if slope <= 0:
        return state, ev, 0.0, ""
    out = _armijo(design, ev.objective, slope, lambda w: ModelState(state.beta + w * d, state.theta, state.lam), opts)
    if out is None:
        return state, ev, 0.0, "beta_linesearch_failed"
    omega, new_ev, new_state = out
    return new_state, new_ev, omega, flag


def mi_theta_step(state: ModelState, design: Design, opts: FitOptions, ev: Evaluation | None = None):
    """One Armijo-damped multiplicative-iterative step in ``theta``.

    Returns ``(state, evaluation, omega, flag)``.
    """
    m = design.m
    if ev is None or ev.grad is None:
        ev = evaluate(state, design, order=1)
    g = ev.grad[:m]
    th = state.theta
    dvec = ev.mi_denominator + opts.xi
    step = th / dvec * g
    slope = float(g @ step)
    if slope <= 0:
        return state, ev, 0.0, ""

    def trial(w):
        new = th + w * step
        # guards against rounding below zero at locked coordinates
        return ModelState(state.beta, np.maximum(new, 0.0), state.lam)

    out = _armijo(design, ev.objective, slope, trial, opts)
    if out is None:
        return state, ev, 0.0, "theta_linesearch_failed"
    omega, new_ev, new_state = out
    return new_state, new_ev, omega, ""


def projected_newton_step(state: ModelState, design: Design, opts: FitOptions, ev: Evaluation | None = None):
    """Joint Newton step on free coordinates, projected onto ``theta >= 0``.

    Free coordinates are all of ``beta`` plus each ``theta_u`` that is off
    the boundary or has a positive gradient.  Returns
    ``(state, evaluation, omega, flag)``; ``omega = 0`` means rejected.
    """
    m = design.m
    if ev is None or ev.hess is None:
        ev = evaluate(state, design, order=2)
    th = state.theta
    g = ev.grad
    eps = boundary_eps(th, opts.boundary_rel)
    free = np.concatenate([(th > eps) | (g[:m] > 0), np.ones(design.p, dtype=bool)])
    idx = np.flatnonzero(free)
    if idx.size == 0:
        return state, ev, 0.0, ""
    d_f = _ridge_solve(-ev.hess[np.ix_(idx, idx)], g[idx])
    if d_f is None or not np.all(np.isfinite(d_f)):
        return state, ev, 0.0, "newton_singular"
    d = np.zeros_like(g)
    d[idx] = d_f
    eta = state.eta
    omega = 1.0
    for _ in range(MAX_HALVINGS + 1):
        new = eta + omega * d
        new[:m] = np.maximum(new[:m], 0.0)
        st = ModelState(new[m:], new[:m], state.lam)
        tr = evaluate(st, design, order=0)
        gain = float(g @ (new - eta))
        if tr.finite and gain > 0 and tr.objective >= ev.objective + opts.armijo_c * gain:
            return st, tr, omega, ""
        omega *= opts.armijo_shrink
    return state, ev, 0.0, "newton_rejected"


def fit(data, system, lam: float = 0.0, opts: FitOptions | None = None, design: Design | None = None) -> FitResult:
    """Maximize ``loglik - lam * theta' R theta`` subject to ``theta >= 0``.

    Parameters
    ----------
    data : Dataset
    system : basis system
    lam : float
        Smoothing parameter.
    opts : FitOptions, optional
    design : Design, optional
        Precomputed design for ``(system, data)``; built when omitted.
    """
    opts = opts or FitOptions()
    if design is None:
        design = make_design(system, data)
    m, p = design.m, design.p
    if isinstance(opts.theta_init, str):
        if opts.theta_init != "median":
            raise ValueError(f"unknown theta_init strategy {opts.theta_init!r}")
        th0 = initial_theta(design)
    else:
        th0 = np.asarray(opts.theta_init, dtype=float)
    be0 = np.zeros(p) if opts.beta_init is None else np.asarray(opts.beta_init, dtype=float)
    state = ModelState(be0, th0, lam)
    ev = evaluate(state, design, order=2 if p else 1)
    if not ev.finite:
        # fall back to the default start if the supplied one is infeasible
        state = ModelState(np.zeros(p), initial_theta(design), lam)
        ev = evaluate(state, design, order=2 if p else 1)
        if not ev.finite:
            raise ValueError(f"initial state is infeasible: {ev.reason}")

    absR = np.abs(design.R)

    def tolerance(phi: float, theta: np.ndarray) -> float:
        base = opts.kkt_tol if opts.kkt_tol is not None else 1e-6 * (1.0 + abs(phi) / design.n)
        return base + penalty_gradient_floor(absR, theta, lam)

    tol = tolerance(ev.objective, state.theta)

    trace = [ev.objective]
    mins = [float(np.min(state.theta))]
    flags: list[str] = []
    converged = False
    it = 0
    eps = boundary_eps(state.theta, opts.boundary_rel)
    res = kkt_residual_from(ev.grad, state.theta, eps)
    if res < tol:
        converged = True
    stalled = 0
    while not converged and it < opts.max_outer_iter:
        it += 1
        before = ev.objective
        if p:
            state, ev, _, fl = newton_beta_step(state, design, opts, ev)
            if fl:
                flags.append(f"{it}:{fl}")
            if ev.grad is None:
                ev = evaluate(state, design, order=1)
        state, ev, _, fl = mi_theta_step(state, design, opts, ev)
        if fl:
            flags.append(f"{it}:{fl}")
        ev = evaluate(state, design, order=2)
        if opts.accelerate:
            state, _, omega, _ = projected_newton_step(state, design, opts, ev)
            if omega > 0:
                ev = evaluate(state, design, order=2)
        trace.append(ev.objective)
        mins.append(float(np.min(state.theta)))
        eps = boundary_eps(state.theta, opts.boundary_rel)
        res = kkt_residual_from(ev.grad, state.theta, eps)
        tol = tolerance(ev.objective, state.theta)
        if res < tol:
            converged = True
            break
        stalled = stalled + 1 if ev.objective - before <= 0 else 0
        if stalled >= 5:
            flags.append(f"{it}:stalled")
            break

    if ev.hess is None:
        ev = evaluate(state, design, order=2)
    gth = ev.grad[:m]
    active = tuple(int(u) for u in np.flatnonzero((state.theta <= eps) & (gth < 0)))
    return FitResult(
        state=state,
        converged=converged,
        iterations=it,
        objective_trace=np.asarray(trace),
        min_theta_trace=np.asarray(mins),
        kkt_residual=res,
        kkt_tol=tol,
        active_set=active,
        boundary_eps=eps,
        evaluation=ev,
        design=design,
        flags=tuple(flags),
    )
