"""Monte Carlo scenarios and estimator scoring.

Three preset scenarios differ in baseline hazard, covariates and censoring
scalars.  Each subject gets an event time ``Y`` by inverse-cumulative-hazard
sampling and three independent uniforms ``U^L, U^R, U^E``.  With probability
``pi_event`` the event time is observed exactly.  Otherwise it is censored
against the window ``[gamma_L U^L, gamma_L U^L + gamma_R U^R]``: left
censored below the window, interval censored inside it and right censored
above it.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .basis import BasisError, basis_for_data
from .inference import InferenceError, baseline_hazard_band, covariance_from_fit, z_quantile
from .optimizer import FitOptions, FitResult, fit
from .smoothing import SmoothingOptions, auto_fit
from .survdata import Dataset, DataError

PERCENTILE_DRAWS = 1_000_000
PERCENTILE_SEED = 20240601
D_POINTS = 512


class Baseline(str, enum.Enum):
    """Closed-form baseline hazards with invertible cumulative hazards."""

    LINEAR = "linear"          # h0(y) = y
    QUADRATIC = "quadratic"    # h0(y) = 3 y^2
    LOGLOGISTIC = "loglogistic"  # h0(y) = 4 e^2 y^3 / (1 + e^2 y^4)

    def hazard(self, y):
        y = np.asarray(y, dtype=float)
        if self is Baseline.LINEAR:
            return y.copy()
        if self is Baseline.QUADRATIC:
            return 3.0 * y ** 2
        e2 = math.exp(2.0)
        return 4.0 * e2 * y ** 3 / (1.0 + e2 * y ** 4)

    def cumulative(self, y):
        y = np.asarray(y, dtype=float)
        if self is Baseline.LINEAR:
            return 0.5 * y ** 2
        if self is Baseline.QUADRATIC:
            return y ** 3
        return np.log1p(math.exp(2.0) * y ** 4)

    def inverse_cumulative(self, H):
        H = np.asarray(H, dtype=float)
        if self is Baseline.LINEAR:
            return np.sqrt(2.0 * H)
        if self is Baseline.QUADRATIC:
            return np.cbrt(H)
        return (np.expm1(H) * math.exp(-2.0)) ** 0.25


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation design.

    Covariate column ``j`` is ``x_scales[j]`` times a standard uniform.
    """

    id: int
    beta_true: tuple[float, ...]
    x_scales: tuple[float, ...]
    baseline: Baseline
    gamma_L: float
    gamma_R: float
    pi_event: float = 0.0
    n: int = 200

    def __post_init__(self):
        object.__setattr__(self, "beta_true", tuple(float(b) for b in self.beta_true))
        object.__setattr__(self, "x_scales", tuple(float(s) for s in self.x_scales))
        object.__setattr__(self, "baseline", Baseline(self.baseline))
        if len(self.beta_true) != len(self.x_scales):
            raise ValueError("beta_true and x_scales lengths differ")
        if not 0 <= self.pi_event <= 1:
            raise ValueError("pi_event must lie in [0, 1]")
        if not (self.gamma_R >= self.gamma_L > 0):
            raise ValueError("censoring scalars must satisfy gamma_R >= gamma_L > 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def p(self) -> int:
        return len(self.beta_true)

    def with_(self, **kw) -> "ScenarioConfig":
        d = asdict(self)
        d.update(kw)
        return ScenarioConfig(**d)

    def to_json(self) -> str:
        d = asdict(self)
        d["baseline"] = self.baseline.value
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls(**json.loads(text))


PRESETS = {
    1: ScenarioConfig(1, (2.0,), (1.0,), Baseline.LINEAR, 1.0, 1.0),
    2: ScenarioConfig(2, (0.75, -0.5, 0.25), (1.0, 5.0, 7.0), Baseline.QUADRATIC, 0.9, 1.3),
    3: ScenarioConfig(3, (0.25, 0.25), (1.0, 7.0), Baseline.LOGLOGISTIC, 0.5, 1.1),
}


def preset(sid: int, **overrides) -> ScenarioConfig:
    if sid not in PRESETS:
        raise ValueError(f"unknown scenario {sid}; choose from {sorted(PRESETS)}")
    return PRESETS[sid].with_(**overrides) if overrides else PRESETS[sid]


def sample_event_time(baseline: Baseline, x, beta, u):
    """Inverse-cumulative-hazard draw ``H0^{-1}(-log(u) exp(-x beta))``."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("u must lie in the open interval (0, 1)")
    x = np.asarray(x, dtype=float)
    beta = np.asarray(beta, dtype=float)
    lp = x @ beta if beta.size else np.zeros(u.shape)
    return Baseline(baseline).inverse_cumulative(-np.log(u) * np.exp(-lp))


def _uniform_open(rng: np.random.Generator, size) -> np.ndarray:
    u = rng.random(size)
    # Generator.random is on [0, 1); map an exact zero to the smallest positive double
    return np.where(u == 0.0, np.nextafter(0.0, 1.0), u)


def generate_arrays(config: ScenarioConfig, rng: np.random.Generator):
    """Draw covariates, event times and observed intervals as arrays."""
    n = config.n
    X = rng.random((n, config.p)) * np.asarray(config.x_scales)
    y = sample_event_time(config.baseline, X, config.beta_true, _uniform_open(rng, n))
    uL = rng.random(n)
    uR = rng.random(n)
    uE = rng.random(n)
    lo = config.gamma_L * uL
    hi = lo + config.gamma_R * uR
    event = uE < config.pi_event
    left = ~event & (y < lo)
    inside = ~event & (lo <= y) & (y <= hi)
    tl = np.where(event, y, np.where(left, 0.0, np.where(inside, lo, hi)))
    tr = np.where(event, y, np.where(left, lo, np.where(inside, hi, np.inf)))
    return X, y, tl, tr


def generate_sample(config: ScenarioConfig, rng: np.random.Generator) -> Dataset:
    X, _, tl, tr = generate_arrays(config, rng)
    names = tuple(f"x{j + 1}" for j in range(config.p))
    return Dataset.from_intervals(tl, tr, X, names)


def censoring_repartition(config: ScenarioConfig, rng: np.random.Generator) -> dict[str, float]:
    """Fractions of left, interval and right censoring among censored subjects."""
    data = generate_sample(config, rng)
    c = data.counts()
    tot = c["left"] + c["interval"] + c["right"]
    return {k: c[k] / tot for k in ("left", "interval", "right")} if tot else {}


@lru_cache(maxsize=None)
def true_percentiles(config_key: tuple) -> dict[str, float]:
    """25th, 50th, 75th and 90th percentiles of the marginal event time.

    Covariates are integrated out by Monte Carlo with a fixed seed.
    """
    baseline, beta, scales = config_key
    rng = np.random.default_rng(PERCENTILE_SEED)
    X = rng.random((PERCENTILE_DRAWS, len(scales))) * np.asarray(scales)
    y = sample_event_time(Baseline(baseline), X, beta, _uniform_open(rng, PERCENTILE_DRAWS))
    q = np.quantile(y, [0.25, 0.5, 0.75, 0.9])
    return {"t1": float(q[0]), "t2": float(q[1]), "t3": float(q[2]), "t_star": float(q[3])}


def scenario_percentiles(config: ScenarioConfig) -> dict[str, float]:
    return true_percentiles((config.baseline.value, config.beta_true, config.x_scales))


@dataclass(frozen=True)
class FitSpec:
    """Estimator settings for a Monte Carlo run.

    ``lam=None`` selects the smoothing parameter automatically.
    """

    family: str = "mspline"
    n_interior: int = 7
    order: int = 3
    zeta: tuple[float, float] = (0.35, 0.4)
    lam: float | None = None
    fit_options: FitOptions = field(default_factory=FitOptions)
    smoothing: SmoothingOptions = field(default_factory=SmoothingOptions)


def estimated_hazard(fitres: FitResult, system, t) -> np.ndarray:
    """Fitted baseline hazard, zero outside the basis support."""
    return system.basis(np.asarray(t, dtype=float), extrapolate=True) @ fitres.state.theta


def integrated_discrepancy(h_hat, h_true, t_star: float, points: int = D_POINTS) -> float:
    """``int_0^t* |h_hat - h_true|`` by the composite trapezoid rule on ``points`` nodes."""
    t = np.linspace(0.0, t_star, points)
    return float(np.trapezoid(np.abs(h_hat(t) - h_true(t)), t))


@dataclass(frozen=True)
class ReplicationRecord:
    index: int
    status: str
    beta_hat: tuple[float, ...] = ()
    se_beta: tuple[float, ...] = ()
    h0_hat: tuple[float, ...] = ()
    se_h0: tuple[float, ...] = ()
    discrepancy: float = math.nan
    lam: float = math.nan
    smoothing_iterations: int = 0
    stabilized: bool = True
    event_fraction: float = math.nan
    sigma2_lam_exact: bool = True


def run_one(config: ScenarioConfig, spec: FitSpec, seed: int, index: int) -> ReplicationRecord:
    """Generate, fit and score one replication with an index-derived RNG stream."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    data = generate_sample(config, rng)
    ev_frac = float(np.mean(data.kind == 0))
    try:
        system = basis_for_data(data, spec.family, spec.n_interior, spec.order, spec.zeta)
        if spec.lam is None:
            af = auto_fit(data, system, spec.smoothing)
            res = af.fit
            iters, stab = af.iterations, af.stabilized
            exact = all(s.lam * 2.0 * s.sigma2 == 1.0 for s in af.trace)
        else:
            res = fit(data, system, spec.lam, spec.fit_options)
            iters, stab, exact = 0, True, True
    except (DataError, BasisError, ValueError):
        return ReplicationRecord(index, "no_solution", event_fraction=ev_frac)
    if not res.converged:
        return ReplicationRecord(index, "no_solution", lam=res.state.lam, smoothing_iterations=iters,
                                 stabilized=stab, event_fraction=ev_frac, sigma2_lam_exact=exact)
    try:
        cov = covariance_from_fit(res)
    except InferenceError:
        return ReplicationRecord(index, "non_psd", lam=res.state.lam, smoothing_iterations=iters,
                                 stabilized=stab, event_fraction=ev_frac, sigma2_lam_exact=exact)
    if not cov.psd or np.any(~np.isfinite(cov.se_beta)):
        return ReplicationRecord(index, "non_psd", lam=res.state.lam, smoothing_iterations=iters,
                                 stabilized=stab, event_fraction=ev_frac, sigma2_lam_exact=exact)
    pct = scenario_percentiles(config)
    ts = np.array([pct["t1"], pct["t2"], pct["t3"]])
    a, b = system.support
    inside = (ts >= a) & (ts <= b)
    h_hat = estimated_hazard(res, system, ts)
    se_h = np.zeros(3)
    if np.any(inside):
        band = baseline_hazard_band(res, cov, system, ts[inside])
        se_h[inside] = band.se
    D = integrated_discrepancy(lambda t: estimated_hazard(res, system, t), config.baseline.hazard, pct["t_star"])
    return ReplicationRecord(
        index=index,
        status="ok",
        beta_hat=tuple(float(v) for v in res.state.beta),
        se_beta=tuple(float(v) for v in cov.se_beta),
        h0_hat=tuple(float(v) for v in h_hat),
        se_h0=tuple(float(v) for v in se_h),
        discrepancy=D,
        lam=res.state.lam,
        smoothing_iterations=iters,
        stabilized=stab,
        event_fraction=ev_frac,
        sigma2_lam_exact=exact,
    )


@dataclass(frozen=True)
class ParameterMetrics:
    name: str
    true: float
    bias: float
    mc_sd: float
    mean_se: float
    coverage: float


@dataclass(frozen=True, eq=False)
class ReplicationMetrics:
    config: ScenarioConfig
    reps: int
    n_ok: int
    failures: dict
    beta: tuple[ParameterMetrics, ...]
    baseline: tuple[ParameterMetrics, ...]
    mean_discrepancy: float
    records: tuple[ReplicationRecord, ...] = field(repr=False)

    def rows(self) -> list[dict]:
        out = []
        for pm in self.beta + self.baseline:
            out.append({"parameter": pm.name, "true": pm.true, "bias": pm.bias, "mc_sd": pm.mc_sd,
                        "mean_se": pm.mean_se, "coverage": pm.coverage})
        out.append({"parameter": "D", "true": 0.0, "bias": self.mean_discrepancy, "mc_sd": math.nan,
                    "mean_se": math.nan, "coverage": math.nan})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["parameter", "true", "bias", "mc_sd", "mean_se", "coverage"],
                           lineterminator="\n")
        w.writeheader()
        for r in self.rows():
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def format_table(self) -> str:
        c = self.config
        lines = [
            f"Scenario {c.id}: n = {c.n}, event proportion = {c.pi_event:g}, "
            f"replications = {self.reps} ({self.n_ok} usable; "
            f"{self.failures.get('non_psd', 0)} non-PSD covariance, {self.failures.get('no_solution', 0)} no solution)",
            f"{'parameter':<12}{'true':>10}{'bias':>12}{'MC SD':>12}{'mean SE':>12}{'coverage':>10}",
        ]
        for r in self.rows():
            def f(v):
                return "" if isinstance(v, float) and math.isnan(v) else f"{v:.6g}"
            lines.append(f"{r['parameter']:<12}{f(r['true']):>10}{f(r['bias']):>12}{f(r['mc_sd']):>12}"
                         f"{f(r['mean_se']):>12}{f(r['coverage']):>10}")
        return "\n".join(lines)


def _metrics(name: str, true: float, est: np.ndarray, se: np.ndarray, z: float) -> ParameterMetrics:
    if est.size == 0:
        return ParameterMetrics(name, true, math.nan, math.nan, math.nan, math.nan)
    sd = float(np.std(est, ddof=1)) if est.size > 1 else 0.0
    hit = np.abs(est - true) <= z * se
    return ParameterMetrics(name, true, float(np.mean(est) - true), sd, float(np.mean(se)), float(np.mean(hit)))


def aggregate(config: ScenarioConfig, records) -> ReplicationMetrics:
    records = tuple(sorted(records, key=lambda r: r.index))
    ok = [r for r in records if r.status == "ok"]
    failures = {"non_psd": sum(r.status == "non_psd" for r in records),
                "no_solution": sum(r.status == "no_solution" for r in records)}
    z = z_quantile(0.95)
    beta = []
    for j, bt in enumerate(config.beta_true):
        est = np.array([r.beta_hat[j] for r in ok])
        se = np.array([r.se_beta[j] for r in ok])
        beta.append(_metrics(f"beta{j + 1}", bt, est, se, z))
    pct = scenario_percentiles(config)
    base = []
    for k, key in enumerate(("t1", "t2", "t3")):
        true = float(config.baseline.hazard(pct[key]))
        est = np.array([r.h0_hat[k] for r in ok])
        se = np.array([r.se_h0[k] for r in ok])
        base.append(_metrics(f"h0({key})", true, est, se, z))
    D = float(np.mean([r.discrepancy for r in ok])) if ok else math.nan
    return ReplicationMetrics(config, len(records), len(ok), failures, tuple(beta), tuple(base), D, records)


def _run_chunk(args):
    config, spec, seed, indices = args
    return [run_one(config, spec, seed, i) for i in indices]


def run_replications(config: ScenarioConfig, spec: FitSpec, reps: int, seed: int, workers: int = 1) -> ReplicationMetrics:
    """Run ``reps`` replications and aggregate them.

    Each replication's RNG derives from ``(seed, index)`` only, so results
    do not depend on ``workers``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    scenario_percentiles(config)
    if workers <= 1:
        records = [run_one(config, spec, seed, i) for i in range(reps)]
    else:
        chunks = [list(range(w, reps, workers)) for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = ex.map(_run_chunk, [(config, spec, seed, c) for c in chunks])
            records = [r for part in parts for r in part]
    return aggregate(config, records)
