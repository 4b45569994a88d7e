"""Command-line entry point: ``fit``, ``simulate`` and ``bases``.

Human-readable output uses 6 significant digits; CSV and JSON files carry
full precision (``repr`` of each float).  Exit codes: 0 success, 2 input
error, 3 non-convergence, 4 inference failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import re
import sys
from pathlib import Path

import numpy as np

from .basis import BasisError, basis_for_data
from .inference import (
    InferenceError,
    baseline_hazard_band,
    covariance_from_fit,
    predict_survival_band,
    regression_summary,
)
from .optimizer import FitOptions, fit
from .simulator import FitSpec, ScenarioConfig, preset, run_replications
from .smoothing import SmoothingError, SmoothingOptions, auto_fit, model_df
from .survdata import DataError, Schema, load_dataset

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
EXIT_INFERENCE = 4
GRID_POINTS = 200

log = logging.getLogger("phmpl")


class InputError(Exception):
    pass


def _num(v) -> str:
    """Full-precision text for machine-readable output."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _g6(v: float) -> str:
    return f"{float(v):.6g}"


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


def _write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([x if isinstance(x, str) else _num(x) for x in r])
    path.write_text(buf.getvalue())


def parse_basis(spec: str, order: int | None) -> tuple[str, int]:
    """``mspline`` (order from ``--order``, default 3), ``msplineK`` or ``gaussian``."""
    if spec == "gaussian":
        return "gaussian", 0
    m = re.fullmatch(r"mspline(\d*)", spec)
    if not m:
        raise InputError(f"unknown basis {spec!r}; use mspline, msplineK or gaussian")
    if m.group(1):
        k = int(m.group(1))
        if order is not None and order != k:
            raise InputError(f"--order {order} conflicts with basis {spec}")
        return "mspline", k
    return "mspline", 3 if order is None else order


def _parse_lambda(text: str):
    if text == "auto":
        return None
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"--lambda must be 'auto' or a number, got {text!r}") from None
    if not v >= 0 or math.isinf(v):
        raise InputError("--lambda must be finite and nonnegative")
    return v


def _parse_columns(text: str | None):
    if text is None:
        return None
    if text == "":
        return ()
    return tuple(int(c) if c.isdigit() else c for c in text.split(","))


def _parse_profile(text: str | None, p: int):
    if text is None:
        return None
    try:
        x = np.array([float(v) for v in text.split(",")]) if text else np.zeros(0)
    except ValueError:
        raise InputError(f"bad covariate profile {text!r}") from None
    if x.size != p:
        raise InputError(f"covariate profile has {x.size} values, model has {p} covariates")
    return x


def cmd_fit(args) -> int:
    raw = Path(args.data).read_bytes() if args.data != "-" else sys.stdin.buffer.read()
    schema = Schema(
        t_left=int(args.t_left) if args.t_left.isdigit() else args.t_left,
        t_right=int(args.t_right) if args.t_right.isdigit() else args.t_right,
        covariates=_parse_columns(args.covariates),
    )
    try:
        data = load_dataset(raw, schema)
        family, order = parse_basis(args.basis, args.order)
        lam = _parse_lambda(args.lam)
        system = basis_for_data(data, family, args.n_interior, order or 3, tuple(args.zeta), origin=args.origin,
                                placement=args.knot_placement)
        profile = _parse_profile(args.covariate_profile, data.p)
    except (DataError, BasisError, InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    fopts = FitOptions(max_outer_iter=args.max_iter)
    nu = math.nan
    smooth_info = {}
    try:
        if lam is None:
            af = auto_fit(data, system, SmoothingOptions(lam_init=args.lambda_init, fit_options=fopts))
            res = af.fit
            nu = af.state.nu
            smooth_info = {"smoothing_iterations": af.iterations, "stabilized": af.stabilized,
                           "smoothing_flags": list(af.flags)}
        else:
            res = fit(data, system, lam, fopts)
    except ValueError as exc:
        print(f"error: no feasible solution: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    if lam:
        try:
            nu = model_df(-res.evaluation.hess_loglik, res.design.R, 1.0 / (2.0 * lam), res.active_set,
                          res.design.R_factor)
        except SmoothingError:
            nu = math.nan

    diagnostics = {
        "converged": res.converged,
        "iterations": res.iterations,
        "kkt_residual": res.kkt_residual,
        "kkt_tol": res.kkt_tol,
        "lambda": res.state.lam,
        "nu": nu,
        "active_set_size": len(res.active_set),
        "active_set": list(res.active_set),
        "loglik": res.evaluation.loglik,
        "objective": res.objective,
        **smooth_info,
        "flags": list(res.flags),
    }
    provenance = {
        "input_sha256": hashlib.sha256(raw).hexdigest(),
        "options": {
            "basis": family if family == "gaussian" else f"mspline{order}",
            "n_interior": args.n_interior,
            "zeta": list(args.zeta),
            "origin": args.origin,
            "knot_placement": args.knot_placement,
            "lambda": args.lam,
            "level": args.level,
            "covariates": list(data.covariate_names),
            "covariate_profile": args.covariate_profile,
        },
        "n": data.n,
        "counts": data.counts(),
        "basis_support": list(system.support),
        "basis_size": system.m,
    }
    out = Path(args.out_dir) if args.out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    if not res.converged:
        print(f"error: optimizer did not converge in {res.iterations} iterations "
              f"(KKT residual {_g6(res.kkt_residual)}, tolerance {_g6(res.kkt_tol)})", file=sys.stderr)
        if out:
            (out / "report.json").write_text(json.dumps(_jsonable(
                {"diagnostics": diagnostics, "provenance": provenance}), indent=2, sort_keys=True) + "\n")
        return EXIT_NOT_CONVERGED
    try:
        cov = covariance_from_fit(res)
    except InferenceError as exc:
        print(f"error: covariance failed: {exc}", file=sys.stderr)
        return EXIT_INFERENCE

    summary = regression_summary(res, cov, data.covariate_names, args.level)
    a, b = system.support
    grid = np.linspace(a, b, GRID_POINTS)
    band = baseline_hazard_band(res, cov, system, grid, args.level)
    sband = None
    if profile is not None:
        sband = predict_survival_band(res, cov, system, profile, np.linspace(0.0, b, GRID_POINTS), args.level)

    lines = [f"Proportional hazards fit: n = {data.n} "
             f"({', '.join(f'{k} {v}' for k, v in data.counts().items())})",
             f"basis {provenance['options']['basis']} with m = {system.m} on [{_g6(a)}, {_g6(b)}]", ""]
    lines.append(summary.format_table() if data.p else "(no covariates)")
    lines += ["", "diagnostics"]
    for k in ("converged", "iterations", "kkt_residual", "lambda", "nu", "active_set_size", "loglik"):
        v = diagnostics[k]
        lines.append(f"  {k:<16}{_g6(v) if isinstance(v, float) else v}")
    if smooth_info:
        lines.append(f"  {'smoothing_iter':<16}{smooth_info['smoothing_iterations']}")
        lines.append(f"  {'stabilized':<16}{smooth_info['stabilized']}")
    if data.p == 0 and system.m == 1:
        lines.append(f"  {'constant_hazard':<16}{_g6(band.h0[0])}")
    lines.append(f"  {'input_sha256':<16}{provenance['input_sha256']}")
    print("\n".join(lines))

    if out:
        _write_csv(out / "regression.csv", ["covariate", "estimate", "se", "hazard_ratio", "ci_low", "ci_high", "z",
                                            "p_value"],
                   [[r.name, r.estimate, r.se, r.hazard_ratio, r.ci_low, r.ci_high, r.z, r.p_value]
                    for r in summary.rows])
        _write_csv(out / "baseline_hazard.csv", ["t", "h0", "se", "lower", "upper"],
                   zip(band.t, band.h0, band.se, band.lower, band.upper))
        if sband is not None:
            _write_csv(out / "survival.csv", ["t", "survival", "lower", "upper", "degenerate"],
                       zip(sband.t, sband.survival, sband.lower, sband.upper, sband.degenerate))
        report = {
            "regression": summary.as_records(),
            "theta": list(res.state.theta),
            "beta": list(res.state.beta),
            "diagnostics": diagnostics,
            "provenance": provenance,
        }
        (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        if args.config:
            config = ScenarioConfig.from_json(Path(args.config).read_text())
        elif args.scenario is not None:
            config = preset(args.scenario)
        else:
            raise InputError("give --scenario or --config")
        over = {}
        if args.n is not None:
            over["n"] = args.n
        if args.pi_event is not None:
            over["pi_event"] = args.pi_event
        config = config.with_(**over) if over else config
        family, order = parse_basis(args.basis, args.order)
        lam = _parse_lambda(args.lam)
        if args.reps < 1:
            raise InputError("--reps must be >= 1")
        spec = FitSpec(family=family, n_interior=args.n_interior, order=order or 3, zeta=tuple(args.zeta), lam=lam)
    except (InputError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    metrics = run_replications(config, spec, args.reps, args.seed, args.workers)
    print(metrics.format_table())
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(metrics.to_csv())
        _write_csv(out / "replications.csv",
                   ["index", "status", "beta_hat", "se_beta", "h0_hat", "se_h0", "discrepancy", "lambda",
                    "smoothing_iterations", "stabilized"],
                   [[r.index, r.status, ";".join(_num(v) for v in r.beta_hat), ";".join(_num(v) for v in r.se_beta),
                     ";".join(_num(v) for v in r.h0_hat), ";".join(_num(v) for v in r.se_h0), r.discrepancy, r.lam,
                     r.smoothing_iterations, r.stabilized] for r in metrics.records])
        (out / "scenario.json").write_text(config.to_json() + "\n")
    if metrics.n_ok == 0:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_bases(args) -> int:
    try:
        family, order = parse_basis(args.basis, args.order)
        if args.knots:
            from .basis import GaussianBasis, KnotSequence, MSplineBasis, gaussian_scales

            knots = KnotSequence(np.array([float(v) for v in args.knots.split(",")]))
            if family == "mspline":
                system = MSplineBasis(knots, order)
            else:
                # without data, scales are set against a uniform pool over the knot range
                pool = np.linspace(*knots.boundary, 1001)
                system = GaussianBasis(knots, gaussian_scales(pool, knots, *args.zeta))
        elif args.data:
            data = load_dataset(Path(args.data).read_bytes())
            system = basis_for_data(data, family, args.n_interior, order or 3, tuple(args.zeta))
        else:
            raise InputError("give --knots or --data")
    except (InputError, ValueError, DataError, BasisError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    a, b = system.support
    grid = np.linspace(a, b, args.points)
    grid[0], grid[-1] = a, b
    psi = system.basis(grid)
    Psi = system.cumulative(grid)
    rows = [[t, u, psi[i, u], Psi[i, u]] for i, t in enumerate(grid) for u in range(system.m)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "u", "psi", "Psi"])
    for r in rows:
        w.writerow([_num(x) for x in r])
    if args.output:
        Path(args.output).write_text(buf.getvalue())
        print(f"wrote {len(rows)} rows for {system.m} basis functions on [{_g6(a)}, {_g6(b)}] to {args.output}")
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _add_basis_args(p):
    p.add_argument("--basis", default="mspline", help="mspline, msplineK (order K) or gaussian")
    p.add_argument("--order", type=int, default=None, help="M-spline order (default 3)")
    p.add_argument("--n-interior", type=int, default=7, help="interior knots at endpoint quantiles")
    p.add_argument("--zeta", type=float, nargs=2, default=(0.4, 0.2), metavar=("INTERIOR", "BOUNDARY"),
                   help="pool fractions covered by Gaussian basis windows")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phmpl", description="Proportional hazards MPL for partly interval-censored data")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a dataset and report estimates")
    f.add_argument("data", help="CSV or TSV file, or - for stdin")
    f.add_argument("--t-left", default="t_left")
    f.add_argument("--t-right", default="t_right")
    f.add_argument("--covariates", default=None, help="comma-separated names or positions; default all other columns")
    _add_basis_args(f)
    f.add_argument("--origin", action="store_true", help="put the lower boundary knot at time 0")
    f.add_argument("--knot-placement", choices=("quantile", "equidistant"), default="quantile")
    f.add_argument("--lambda", dest="lam", default="auto", help="smoothing parameter or 'auto'")
    f.add_argument("--lambda-init", type=float, default=1.0)
    f.add_argument("--max-iter", type=int, default=5000)
    f.add_argument("--level", type=float, default=0.95)
    f.add_argument("--covariate-profile", default=None, help="comma-separated x for the survival grid")
    f.add_argument("--out-dir", default=None)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="Monte Carlo study of a preset or configured scenario")
    s.add_argument("--scenario", type=int, choices=(1, 2, 3))
    s.add_argument("--config", default=None, help="scenario JSON file")
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--pi-event", type=float, default=None)
    s.add_argument("--reps", type=int, default=200)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--workers", type=int, default=1)
    _add_basis_args(s)
    s.set_defaults(zeta=(0.35, 0.4))
    s.add_argument("--lambda", dest="lam", default="auto")
    s.add_argument("--out-dir", default=None)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bases", help="tabulate basis functions on a grid")
    b.add_argument("--knots", default=None, help="comma-separated knots including boundaries")
    b.add_argument("--data", default=None, help="take quantile knots from this dataset")
    _add_basis_args(b)
    b.add_argument("--points", type=int, default=GRID_POINTS)
    b.add_argument("--output", default=None)
    b.set_defaults(func=cmd_bases)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
