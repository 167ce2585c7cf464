"""``quadvar`` command line: simulate, estimate, experiment, interpolate, limits, ingest.

Exit codes: 0 success, 1 I/O or data parsing, 2 arguments or config, 3 sentinel ``r_hat``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from quadvar import __version__
from quadvar.design import DensitySpec, build_design, spacing_report
from quadvar.errors import InvalidInputError, NumericalError, QuadvarError
from quadvar.estimators import EstimatorConfig, estimate_regularity, theoretical_limit
from quadvar.gp_sim import GaussianModel, ingest_csv, simulate_exact, simulate_fbm_circulant
from quadvar.interp import PiecewiseLagrange, exact_imse, plugin_approximation, plugin_quadrature
from quadvar.montecarlo import load_config, rate_regression, run_experiment

EXIT_OK, EXIT_IO, EXIT_ARGS, EXIT_SENTINEL = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _header(config: dict, seed) -> str:
    return f"# quadvar {__version__}\n# config_hash {_hash(config)}\n# seed {seed}\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from None
    else:
        sys.stdout.write(text)


def _density(text: str, T: float) -> DensitySpec:
    if text == "uniform":
        return DensitySpec.uniform(T)
    if text.startswith("affine:"):
        try:
            c0, c1 = (float(v) for v in text.split(":", 1)[1].split(","))
        except ValueError:
            raise CliError(f"bad density {text!r}; use affine:c0,c1", EXIT_ARGS) from None
        return DensitySpec.affine(c0, c1, T)
    raise CliError(f"unknown density {text!r}; use uniform or affine:c0,c1", EXIT_ARGS)


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("QUADVAR_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(f"QUADVAR_THREADS must be an integer, got {env!r}", EXIT_ARGS) from None
    return 1


def _estimator(args) -> EstimatorConfig:
    spec = {"bn": args.bn, "p": args.p, "u": args.u, "v": args.v, "step1_scale": args.step1_scale}
    if args.mn is not None:
        spec["m_n"] = args.mn
    try:
        return EstimatorConfig.from_dict(spec)
    except InvalidInputError as exc:
        raise CliError(str(exc), EXIT_ARGS) from None


def _ingest(path: str):
    try:
        return ingest_csv(path)
    except (InvalidInputError, OSError) as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None


def _model_spec(args) -> dict:
    spec = {"kernel": args.model}
    for key in ("beta", "theta", "sigma", "nu", "alpha", "phi"):
        val = getattr(args, key, None)
        if val is not None:
            spec[key] = val
    return spec


def _model(args) -> GaussianModel:
    if args.beta is not None and not 0 < args.beta < 1:
        raise CliError(f"--beta must lie in (0, 1), got {args.beta}", EXIT_ARGS)
    try:
        return GaussianModel.from_dict(_model_spec(args))
    except InvalidInputError as exc:
        raise CliError(str(exc), EXIT_ARGS) from None


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    model = _model(args)
    if args.n < 2:
        raise CliError("--n must be >= 2", EXIT_ARGS)
    design = build_design(_density(args.density, args.T), args.n, args.T)
    method = args.method
    if method == "auto":
        method = "circulant" if args.model == "fbm" and design.is_equidistant else "exact"
    try:
        if method == "circulant":
            if args.model != "fbm" or not design.is_equidistant:
                raise CliError("circulant simulation needs --model fbm on the uniform density", EXIT_ARGS)
            path = simulate_fbm_circulant(args.beta, args.n, args.T, np.random.default_rng(args.seed))
        else:
            path = simulate_exact(model, design, np.random.default_rng(args.seed))
    except InvalidInputError as exc:
        raise CliError(str(exc), EXIT_ARGS) from None
    config = {"model": model.to_dict(), "n": args.n, "T": args.T, "density": args.density, "method": method}
    body = "".join(f"{t:.17g},{x:.17g}\n" for t, x in zip(path.t, path.values))
    _emit(_header(config, args.seed) + "t,x\n" + body, args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _estimator(args)
    path = _ingest(args.input)
    try:
        est = estimate_regularity(path, cfg)
    except InvalidInputError as exc:
        raise CliError(str(exc), EXIT_ARGS) from None
    except NumericalError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    report = est.to_dict()
    report["n"] = path.n
    report["step1_scale"] = cfg.step1_scale
    if args.json or args.out:
        _emit(json.dumps(report, indent=2) + "\n", args.out)
    else:
        if est.found:
            print(f"n = {path.n}\nr_hat = {est.r_hat}\nbeta_hat = {est.beta_hat:.6f}\nH_hat = {est.H_hat:.6f}")
        else:
            print(f"n = {path.n}\nr_hat = l0 (no order up to m_n = {est.m_n} crossed n^2 b_n)")
    if not est.found:
        print(
            f"order not found: no quadratic variation of order 2..{est.m_n} reached the threshold "
            f"{est.qv_by_order[0].threshold:.6g}; the data may be polynomial, or m_n is too small",
            file=sys.stderr,
        )
        return EXIT_SENTINEL
    return EXIT_OK


def cmd_experiment(args) -> int:
    try:
        cfg = load_config(args.config)
        cfg = cfg.with_overrides(replications=args.reps, master_seed=args.seed)
    except FileNotFoundError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    except (InvalidInputError, TypeError) as exc:
        raise CliError(f"invalid experiment config: {exc}", EXIT_ARGS) from None
    summary = run_experiment(cfg, threads=_threads(args))
    if args.json:
        payload = {
            "config": cfg.to_dict(),
            "config_hash": cfg.config_hash,
            "rows": [{"n": r.n, "metric": r.metric, "value": r.value, "stderr": r.stderr, "failures": r.failures}
                     for r in summary.rows],
            "flagged": summary.flagged,
        }
        _emit(json.dumps(payload, indent=2, allow_nan=True) + "\n", args.out)
    else:
        _emit(summary.to_csv(), args.out)
    if args.replications_out:
        _emit(summary.replications_csv(), args.replications_out)
    if summary.flagged:
        print(f"warning: cells with more than 1% failed replications: {summary.flagged}", file=sys.stderr)
    return EXIT_OK


def cmd_interpolate(args) -> int:
    if args.input is None:
        return _imse_study(args)
    path = _ingest(args.input)
    est = None
    if args.r is None:
        est = estimate_regularity(path, _estimator(args))
        interp = plugin_approximation(path, est)
    else:
        try:
            interp = PiecewiseLagrange.from_path(path, args.r)
        except InvalidInputError as exc:
            raise CliError(str(exc), EXIT_ARGS) from None
    if args.quadrature:
        if est is None:
            est = estimate_regularity(path, _estimator(args))
        q = plugin_quadrature(path, est, args.rho)
        print(json.dumps({"integral": q.value, "order": q.order, "fallback": q.fallback}))
        return EXIT_OK
    grid = np.linspace(0.0, path.design.T, args.points)
    xhat = interp(grid)
    config = {"input": str(args.input), "r": interp.r, "points": args.points}
    body = "".join(f"{t:.17g},{x:.17g}\n" for t, x in zip(grid, xhat))
    _emit(_header(config, None) + "t,xhat\n" + body, args.out)
    return EXIT_OK


def _imse_study(args) -> int:
    if args.model is None:
        raise CliError("interpolate needs an input CSV or --model for an IMSE study", EXIT_ARGS)
    model = _model(args)
    try:
        grid = [int(v) for v in args.n_grid.split(",")]
    except ValueError:
        raise CliError(f"bad --n-grid {args.n_grid!r}", EXIT_ARGS) from None
    r = args.r or 1
    rows = [(n, exact_imse(model, build_design(DensitySpec.uniform(1.0), n, 1.0), r, args.rho)) for n in grid]
    config = {"model": model.to_dict(), "r": r, "n_grid": grid, "rho": args.rho}
    text = _header(config, None)
    if len(rows) >= 3:
        slope, r2 = rate_regression([n for n, _ in rows], [v for _, v in rows])
        text += f"# slope {slope:.6f}\n# r2 {r2:.6f}\n"
    text += "n,imse\n" + "".join(f"{n},{v:.12g}\n" for n, v in rows)
    _emit(text, args.out)
    return EXIT_OK


def cmd_limits(args) -> int:
    if not 0 < args.beta < 1:
        raise CliError("--beta must lie in (0, 1)", EXIT_ARGS)
    try:
        psi = _density(args.psi, args.T)
        value = theoretical_limit(args.p, args.r0, args.beta, d0=args.d0_scale, psi=psi, T=args.T)
    except InvalidInputError as exc:
        raise CliError(str(exc), EXIT_ARGS) from None
    if args.json:
        print(json.dumps({"p": args.p, "r0": args.r0, "beta": args.beta, "psi": args.psi, "T": args.T,
                          "d0_scale": args.d0_scale, "limit": value}))
    else:
        print(f"{value:.12g}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    path = _ingest(args.input)
    d = path.design
    rep = spacing_report(d) if d.density is not None else None
    info = {
        "n": d.n,
        "T": d.T,
        "delta_n": d.delta_n,
        "equidistant": bool(d.is_equidistant),
        "min_spacing": float(np.min(np.diff(d.points))),
        "max_spacing": float(np.max(np.diff(d.points))),
        "x_min": float(np.min(path.values)),
        "x_max": float(np.max(path.values)),
    }
    if rep is not None:
        info["spacing_ratio"] = [rep.min_ratio, rep.max_ratio]
    if args.out:
        body = "".join(f"{t:.17g},{x:.17g}\n" for t, x in zip(path.t, path.values))
        _emit(_header({"input": str(args.input)}, None) + "t,x\n" + body, args.out)
    print(json.dumps(info, indent=None if args.json else 2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_estimator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bn", default="inv_log", help="threshold rule: inv_log, const:C or power_log:A")
    p.add_argument("--mn", type=int, default=None, help="highest order scanned in step 1")
    p.add_argument("--p", type=int, default=1, choices=(1, 2))
    p.add_argument("--u", type=int, default=1)
    p.add_argument("--v", type=int, default=4)
    p.add_argument("--step1-scale", default="finite", choices=("finite", "divided"))


def _add_model_flags(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--model", required=required,
                   choices=("wiener", "fbm", "ifbm", "integrated_fbm", "integrated_wiener", "ou", "matern"))
    p.add_argument("--beta", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--phi", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadvar", description="Global smoothness estimation for Gaussian processes.")
    parser.add_argument("--version", action="version", version=f"quadvar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw one sample path and write it as t,x CSV")
    _add_model_flags(p, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--density", default="uniform", help="uniform or affine:c0,c1")
    p.add_argument("--method", default="auto", choices=("auto", "exact", "circulant"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate (r0, beta0, H) from a CSV series")
    p.add_argument("input")
    _add_estimator_flags(p)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("experiment", help="run a Monte Carlo experiment config")
    p.add_argument("config", help="JSON file or bundled config name (e.g. table1_wiener)")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.add_argument("--replications-out", help="per-replication CSV for boxplots")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("interpolate", help="plug-in interpolation, quadrature or an exact IMSE study")
    p.add_argument("input", nargs="?")
    p.add_argument("--r", type=int, help="fixed order; default is the plug-in order from the estimate")
    p.add_argument("--points", type=int, default=1001)
    p.add_argument("--quadrature", action="store_true")
    p.add_argument("--rho", default="one", help="weight: one or affine:c0,c1")
    p.add_argument("--n-grid", default="32,64,128,256,512")
    _add_model_flags(p, required=False)
    _add_estimator_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("limits", help="theoretical limit of the normalized quadratic variation")
    p.add_argument("--p", type=int, default=1, choices=(1, 2))
    p.add_argument("--r0", type=int, default=0)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--psi", default="uniform", help="uniform or affine:c0,c1")
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--d0-scale", type=float, default=1.0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_limits)

    p = sub.add_parser("ingest", help="validate a CSV series and report its design")
    p.add_argument("input")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"quadvar: error: {exc}", file=sys.stderr)
        return exc.code
    except InvalidInputError as exc:
        print(f"quadvar: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (QuadvarError, OSError) as exc:
        print(f"quadvar: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
