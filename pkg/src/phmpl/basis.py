"""Nonnegative basis families for the baseline hazard.

Two families are supported:

* M-splines of order ``o`` (degree ``o - 1``) on a knot sequence with the
  boundary knots repeated ``o`` times.  Each M-spline integrates to one and
  its integral from the left boundary (the I-spline) rises from 0 to 1.
* Truncated Gaussian densities centred on the knots, with per-knot scales,
  normalized to unit mass on the support.

All matrix evaluators return arrays of shape ``(len(t), m)``.  Basis indices
are zero-based throughout.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from scipy import integrate, special

log = logging.getLogger(__name__)

SIGMA_FLOOR_FRAC = 1e-3


class BasisError(ValueError):
    """Raised for invalid knots, scales, indices, or evaluation points."""


@dataclass(frozen=True, eq=False)
class KnotSequence:
    """Strictly increasing distinct knots, boundary knots included.

    Two knots (no interior knot) describe a single span.
    """

    knots: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float).reshape(-1)
        if k.size < 2:
            raise BasisError("need two boundary knots")
        if not np.all(np.isfinite(k)):
            raise BasisError("knots must be finite")
        if np.any(np.diff(k) <= 0):
            raise BasisError("knots must be strictly increasing")
        k.setflags(write=False)
        object.__setattr__(self, "knots", k)

    @property
    def boundary(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def interior(self) -> np.ndarray:
        return self.knots[1:-1]

    @property
    def n_interior(self) -> int:
        return self.knots.size - 2


def quantile_knots(pool, n_interior: int) -> KnotSequence:
    """Knots at equally spaced quantiles of an endpoint pool.

    Interior knots sit at probabilities ``j / (n_interior + 1)`` using linear
    interpolation between order statistics; the boundary knots are the pool
    minimum and maximum.  Coincident knots are merged with a warning.
    """
    pool = np.sort(np.asarray(pool, dtype=float).reshape(-1))
    if n_interior < 1:
        raise BasisError("n_interior must be >= 1")
    n_distinct = np.unique(pool).size
    if n_distinct < n_interior + 2:
        raise BasisError(f"pool has {n_distinct} distinct values; need at least {n_interior + 2}")
    probs = np.arange(1, n_interior + 1) / (n_interior + 1)
    raw = np.concatenate([[pool[0]], np.quantile(pool, probs), [pool[-1]]])
    knots = np.unique(raw)
    if knots.size < raw.size:
        log.warning("collapsed %d duplicate quantile knots; %d interior knots remain",
                    raw.size - knots.size, knots.size - 2)
    if knots.size < 3:
        raise BasisError("all interior quantiles coincide with a boundary knot")
    return KnotSequence(knots)


def gaussian_scales(pool, knots: KnotSequence, zeta1: float, zeta2: float) -> np.ndarray:
    """Per-knot scales so that ``[alpha_u - 2 sigma_u, alpha_u + 2 sigma_u]`` holds a pool fraction.

    ``zeta1`` applies to interior knots and ``zeta2`` to the two boundary
    knots.  Scales are floored at ``1e-3`` times the knot range.
    """
    pool = np.asarray(pool, dtype=float).reshape(-1)
    if pool.size == 0:
        raise BasisError("empty endpoint pool")
    for z in (zeta1, zeta2):
        if not 0 < z < 1:
            raise BasisError(f"coverage fractions must lie in (0, 1), got {z}")
    a, b = knots.boundary
    floor = SIGMA_FLOOR_FRAC * (b - a)
    n = pool.size
    sig = np.empty(knots.knots.size)
    for u, c in enumerate(knots.knots):
        z = zeta2 if u in (0, knots.knots.size - 1) else zeta1
        k = max(1, math.ceil(z * n - 1e-9))
        d = np.sort(np.abs(pool - c))
        sig[u] = max(d[k - 1] / 2.0, floor)
    return sig


def _check_t(t, a: float, b: float, extrapolate: bool) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.ndim != 1:
        t = t.reshape(-1)
    if np.any(np.isnan(t)):
        raise BasisError("evaluation points must not be NaN")
    if not extrapolate and (np.any(t < a) or np.any(t > b)):
        raise BasisError(f"evaluation points outside [{a}, {b}]")
    return t


def _bspline_matrix(tau: np.ndarray, k: int, t: np.ndarray) -> np.ndarray:
    """Order-``k`` B-splines on knot vector ``tau`` at points ``t`` (Cox-de Boor).

    The last nonempty span is closed on the right so the basis is
    continuous at the upper boundary.
    """
    nb = tau.size - k
    if k < 1 or nb < 1:
        return np.zeros((t.size, max(nb, 0)))
    nonempty = np.flatnonzero(np.diff(tau) > 0)
    span = np.searchsorted(tau, t, side="right") - 1
    span = np.clip(span, nonempty[0], nonempty[-1])
    inside = (t >= tau[0]) & (t <= tau[-1])
    B = np.zeros((t.size, tau.size - 1))
    rows = np.flatnonzero(inside)
    B[rows, span[rows]] = 1.0
    tt = t[:, None]
    for kk in range(2, k + 1):
        n_cur = tau.size - kk
        left = tau[:n_cur]
        d1 = tau[kk - 1:kk - 1 + n_cur] - left
        right = tau[kk:kk + n_cur]
        d2 = right - tau[1:1 + n_cur]
        w1 = np.divide(1.0, d1, out=np.zeros_like(d1), where=d1 > 0)
        w2 = np.divide(1.0, d2, out=np.zeros_like(d2), where=d2 > 0)
        B = (tt - left) * w1 * B[:, :n_cur] + (right - tt) * w2 * B[:, 1:n_cur + 1]
    return B


def _bspline_deriv(tau: np.ndarray, k: int, t: np.ndarray, nu: int) -> np.ndarray:
    """``nu``-th derivative of the order-``k`` B-splines."""
    nb = tau.size - k
    if nu == 0:
        return _bspline_matrix(tau, k, t)
    if k - 1 < 1:
        return np.zeros((t.size, nb))
    D = _bspline_deriv(tau, k - 1, t, nu - 1)
    d1 = tau[k - 1:k - 1 + nb] - tau[:nb]
    d2 = tau[k:k + nb] - tau[1:1 + nb]
    w1 = np.divide(k - 1.0, d1, out=np.zeros_like(d1), where=d1 > 0)
    w2 = np.divide(k - 1.0, d2, out=np.zeros_like(d2), where=d2 > 0)
    return w1 * D[:, :nb] - w2 * D[:, 1:nb + 1]


@dataclass(frozen=True, eq=False)
class MSplineBasis:
    """M-spline basis of order ``order`` on ``knots``.

    With ``n`` interior knots the system has ``m = n + order`` functions.
    """

    knots: KnotSequence
    order: int = 3

    def __post_init__(self):
        if not isinstance(self.knots, KnotSequence):
            object.__setattr__(self, "knots", KnotSequence(self.knots))
        if int(self.order) != self.order or self.order < 1:
            raise BasisError(f"order must be a positive integer, got {self.order}")

    family = "mspline"

    @cached_property
    def tau(self) -> np.ndarray:
        """Full knot vector with each boundary knot repeated ``order`` times."""
        a, b = self.knots.boundary
        o = self.order
        return np.concatenate([[a] * o, self.knots.interior, [b] * o])

    @property
    def m(self) -> int:
        return self.knots.n_interior + self.order

    @property
    def support(self) -> tuple[float, float]:
        return self.knots.boundary

    @cached_property
    def _scale(self) -> np.ndarray:
        o = self.order
        width = self.tau[o:o + self.m] - self.tau[:self.m]
        return o / width

    def support_of(self, u: int) -> tuple[float, float]:
        """Interval ``[tau_u, tau_{u+o}]`` outside which basis ``u`` vanishes."""
        self._check_index(u)
        return float(self.tau[u]), float(self.tau[u + self.order])

    def _check_index(self, u: int) -> None:
        if not 0 <= u < self.m:
            raise BasisError(f"basis index {u} out of range 0..{self.m - 1}")

    def basis(self, t, extrapolate: bool = False) -> np.ndarray:
        """M-spline values ``psi_u(t)``; zero outside the support when extrapolating."""
        a, b = self.support
        t = _check_t(t, a, b, extrapolate)
        return _bspline_matrix(self.tau, self.order, t) * self._scale

    def cumulative(self, t, extrapolate: bool = False) -> np.ndarray:
        """I-spline values ``Psi_u(t)``, the integral of ``psi_u`` from the left boundary.

        Below the support the values are 0 and above it they are 1; for
        ``extrapolate=True`` this extends outside ``[a, b]``.
        """
        a, b = self.support
        t = _check_t(t, a, b, extrapolate)
        o, m = self.order, self.m
        tau1 = np.concatenate([[a], self.tau, [b]])
        B = _bspline_matrix(tau1, o + 1, np.clip(t, a, b))
        # Psi_u = sum_{j >= u+1} B_{j,o+1} on the extended vector
        tail = np.cumsum(B[:, ::-1], axis=1)[:, ::-1]
        Psi = tail[:, 1:m + 1]
        lo = self.tau[:m]
        hi = self.tau[o:o + m]
        tt = t[:, None]
        Psi = np.where(tt <= lo, 0.0, np.where(tt >= hi, 1.0, np.clip(Psi, 0.0, 1.0)))
        return Psi

    def second_derivative(self, t) -> np.ndarray:
        a, b = self.support
        t = _check_t(t, a, b, False)
        return _bspline_deriv(self.tau, self.order, t, 2) * self._scale

    @cached_property
    def penalty_factor(self) -> np.ndarray:
        """Matrix ``F`` with ``R = F' F``: weighted second derivatives at Gauss nodes.

        ``theta' R theta = |F theta|^2`` is then a sum of squares, which avoids
        the cancellation of the quadratic form when ``R`` has large entries.
        """
        o = self.order
        if o <= 2:
            F = np.zeros((1, self.m))
        else:
            # psi'' has degree o - 3, so o - 2 nodes per span integrate the product exactly
            x, w = np.polynomial.legendre.leggauss(max(o - 2, 1))
            k = self.knots.knots
            h = 0.5 * np.diff(k)
            nodes = (k[:-1, None] + h[:, None] * (x + 1.0)).ravel()
            weights = (h[:, None] * w).ravel()
            F = self.second_derivative(nodes) * np.sqrt(weights)[:, None]
        F.setflags(write=False)
        return F

    @cached_property
    def penalty(self) -> np.ndarray:
        """Roughness matrix ``R_uv = int psi_u'' psi_v''``, exact for piecewise polynomials."""
        F = self.penalty_factor
        R = F.T @ F
        R = 0.5 * (R + R.T)
        R.setflags(write=False)
        return R


def _normal_mass(z1, z2):
    """``Phi(z2) - Phi(z1)`` computed on the side of zero that avoids cancellation."""
    z1, z2 = np.broadcast_arrays(np.asarray(z1, float), np.asarray(z2, float))
    upper = z1 > 0
    return np.where(upper, special.ndtr(-z1) - special.ndtr(-z2), special.ndtr(z2) - special.ndtr(z1))


@dataclass(frozen=True, eq=False)
class GaussianBasis:
    """Truncated Gaussian densities centred on every knot.

    ``psi_u(t) = phi((t - alpha_u) / sigma_u) / (sigma_u * Delta_u)`` where
    ``Delta_u`` is the normal mass on the support, so each ``psi_u`` is a
    probability density there and ``Psi_u`` its distribution function.
    """

    knots: KnotSequence
    scales: np.ndarray = field(default=None)

    family = "gaussian"

    def __post_init__(self):
        if not isinstance(self.knots, KnotSequence):
            object.__setattr__(self, "knots", KnotSequence(self.knots))
        s = np.asarray(self.scales, dtype=float).reshape(-1)
        if s.size != self.knots.knots.size:
            raise BasisError(f"need one scale per knot ({self.knots.knots.size}), got {s.size}")
        if np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise BasisError("Gaussian scales must be positive and finite")
        s.setflags(write=False)
        object.__setattr__(self, "scales", s)

    @property
    def m(self) -> int:
        return self.knots.knots.size

    @property
    def support(self) -> tuple[float, float]:
        return self.knots.boundary

    @property
    def centers(self) -> np.ndarray:
        return self.knots.knots

    @cached_property
    def _za(self) -> np.ndarray:
        return (self.support[0] - self.centers) / self.scales

    @cached_property
    def _mass(self) -> np.ndarray:
        zb = (self.support[1] - self.centers) / self.scales
        return _normal_mass(self._za, zb)

    def _z(self, t):
        return (t[:, None] - self.centers) / self.scales

    def basis(self, t, extrapolate: bool = False) -> np.ndarray:
        a, b = self.support
        t = _check_t(t, a, b, extrapolate)
        out = np.exp(-0.5 * self._z(t) ** 2) / math.sqrt(2 * math.pi)
        out = out / (self.scales * self._mass)
        if extrapolate:
            out[(t < a) | (t > b)] = 0.0
        return out

    def cumulative(self, t, extrapolate: bool = False) -> np.ndarray:
        a, b = self.support
        t = _check_t(t, a, b, extrapolate)
        tc = np.clip(t, a, b)
        z = self._z(tc)
        out = _normal_mass(self._za, z) / self._mass
        # exact boundary values
        out[tc <= a] = 0.0
        out[tc >= b] = 1.0
        return np.clip(out, 0.0, 1.0)

    def second_derivative(self, t) -> np.ndarray:
        a, b = self.support
        t = _check_t(t, a, b, False)
        z = self._z(t)
        phi = np.exp(-0.5 * z ** 2) / math.sqrt(2 * math.pi)
        return (z ** 2 - 1.0) * phi / (self.scales ** 3 * self._mass)

    def _d2(self, u: int, s: float) -> float:
        z = (s - self.centers[u]) / self.scales[u]
        return (z * z - 1.0) * math.exp(-0.5 * z * z) / (
            math.sqrt(2 * math.pi) * self.scales[u] ** 3 * self._mass[u])

    @cached_property
    def penalty(self) -> np.ndarray:
        """Roughness matrix by adaptive quadrature (relative tolerance 1e-10)."""
        m = self.m
        a, b = self.support
        pts = np.unique(np.concatenate([
            self.centers,
            (self.centers[:, None] + np.array([-2.0, -1.0, 1.0, 2.0]) * self.scales[:, None]).ravel(),
        ]))
        pts = pts[(pts > a) & (pts < b)]
        R = np.zeros((m, m))
        for u in range(m):
            for v in range(u, m):
                def f(s, u=u, v=v):
                    return self._d2(u, s) * self._d2(v, s)
                val, _ = integrate.quad(f, a, b, points=pts, epsabs=0.0, epsrel=1e-10, limit=500)
                R[u, v] = R[v, u] = val
        R.setflags(write=False)
        return R

    @cached_property
    def penalty_factor(self) -> np.ndarray:
        """Matrix ``F`` with ``F' F`` equal to the penalty up to clipped round-off eigenvalues."""
        return factor_psd(self.penalty)


def factor_psd(R) -> np.ndarray:
    """Square-root factor ``F`` of a symmetric PSD matrix, ``R ~= F' F``."""
    R = np.asarray(R, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (R + R.T))
    F = np.sqrt(np.clip(vals, 0.0, None))[:, None] * vecs.T
    F.setflags(write=False)
    return F


BasisSystem = Union[MSplineBasis, GaussianBasis]


def _scalar(system, u: int, t: float, fn: str) -> float:
    if not 0 <= u < system.m:
        raise BasisError(f"basis index {u} out of range 0..{system.m - 1}")
    return float(getattr(system, fn)(np.array([float(t)]))[0, u])


def mspline_eval(system: MSplineBasis, u: int, t: float) -> float:
    """Value of M-spline ``u`` (zero-based) at ``t``."""
    return _scalar(system, u, t, "basis")


def ispline_eval(system: MSplineBasis, u: int, t: float) -> float:
    """Value of I-spline ``u`` (zero-based) at ``t``."""
    return _scalar(system, u, t, "cumulative")


def gaussian_eval(system: GaussianBasis, u: int, t: float) -> float:
    return _scalar(system, u, t, "basis")


def gaussian_cumulative(system: GaussianBasis, u: int, t: float) -> float:
    return _scalar(system, u, t, "cumulative")


def penalty_matrix(system: BasisSystem) -> np.ndarray:
    return system.penalty


def build_basis(
    pool,
    family: str = "mspline",
    n_interior: int = 7,
    order: int = 3,
    zeta: tuple[float, float] = (0.4, 0.2),
) -> BasisSystem:
    """Knots at pool quantiles followed by the requested basis family."""
    knots = quantile_knots(pool, n_interior)
    if family == "mspline":
        return MSplineBasis(knots, order)
    if family == "gaussian":
        return GaussianBasis(knots, gaussian_scales(pool, knots, *zeta))
    raise BasisError(f"unknown basis family {family!r}")


def equidistant_knots(a: float, b: float, n_interior: int) -> KnotSequence:
    """Boundary knots at ``a`` and ``b`` with equally spaced interior knots."""
    if not b > a:
        raise BasisError("need a < b")
    if n_interior < 0:
        raise BasisError("n_interior must be >= 0")
    return KnotSequence(np.linspace(a, b, n_interior + 2))


def basis_for_data(
    data,
    family: str = "mspline",
    n_interior: int = 7,
    order: int = 3,
    zeta: tuple[float, float] = (0.4, 0.2),
    origin: bool = False,
    placement: str = "quantile",
) -> BasisSystem:
    """Basis with knots from the dataset's finite positive endpoints.

    ``placement`` is ``"quantile"`` (interior knots at pool quantiles) or
    ``"equidistant"``.  A left-censored subject whose right endpoint equals
    the smallest pool value would have zero probability under a hazard
    supported on ``[min, max]``, so in that case the lower boundary knot is
    moved to the time origin; ``origin=True`` always does so.
    ``n_interior=0`` gives a single span between the boundary knots (a
    constant hazard for ``order=1``).
    """
    from .survdata import CensorKind, endpoint_pool

    pool = endpoint_pool(data)
    if n_interior < 0:
        raise BasisError("n_interior must be >= 0")
    if pool.size == 0:
        raise BasisError("no finite positive endpoints")
    lo = float(pool[0])
    left = data.kind == CensorKind.LEFT
    if origin or np.any(data.t_right[left] == lo):
        lo = 0.0
    if placement == "equidistant" or n_interior == 0:
        knots = equidistant_knots(lo, float(pool[-1]), n_interior)
    elif placement == "quantile":
        knots = quantile_knots(pool, n_interior)
        if lo == 0.0:
            knots = KnotSequence(np.concatenate([[0.0], knots.knots[1:]]))
    else:
        raise BasisError(f"unknown knot placement {placement!r}")
    if family == "mspline":
        return MSplineBasis(knots, order)
    if family == "gaussian":
        return GaussianBasis(knots, gaussian_scales(pool, knots, *zeta))
    raise BasisError(f"unknown basis family {family!r}")
