"""Command-line interface producing learning curves, thresholds, spectra
and theory-vs-simulation comparison tables.

Subcommands
-----------
curve       state-evolution learning curve over an alpha grid
thresholds  interpolation / strong-recovery / weak thresholds over a kappa* grid
spectrum    singular-value density of the minimizer (or a raw widened law)
simulate    finite-size solver runs (gamp / prox / gd)
compare     theory vs finite-size simulation with z-scores

Tables are written as CSV (the primary format; floats printed with %.12g)
or as a JSON mirror of the same rounded values.  Output is deterministic:
no timestamps, rows ordered by grid index, every row carries the full
parameter set.  Progress and diagnostics go to stderr.  Exit codes:
0 success, 1 configuration error, 2 partial numerical failure.

The environment variable QUADNET_WORKERS sets the default process count
for simulation grids (alpha-continuation in theory sweeps is inherently
sequential and always runs in-process).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import simulator, spectral, thresholds
from .state_evolution import (
    ModelParams,
    observables,
    sweep_alpha,
)

__all__ = ["main"]


class ConfigError(ValueError):
    """Invalid command-line configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route usage problems to exit code 1
        raise ConfigError(message)


def _parse_grid(text: str, name: str) -> list[float]:
    """Parse 'lo:hi:num' (inclusive linspace) or a comma list of floats."""
    try:
        if ":" in text:
            lo_s, hi_s, num_s = text.split(":")
            num = int(num_s)
            if num < 1:
                raise ValueError
            vals = np.linspace(float(lo_s), float(hi_s), num).tolist()
        else:
            vals = [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except (ValueError, TypeError):
        raise ConfigError(f"could not parse {name} grid {text!r} "
                          "(expected 'lo:hi:num' or 'x1,x2,...')") from None
    if not vals:
        raise ConfigError(f"{name} grid is empty")
    if not all(math.isfinite(v) for v in vals):
        raise ConfigError(f"{name} grid contains non-finite values")
    return vals


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return "%.12g" % value
    return str(value)


def _json_value(value):
    if isinstance(value, float):
        if math.isnan(value):
            return None
        return float("%.12g" % value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def _write_table(columns, rows, fmt: str, out_path: str | None) -> None:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
        text = buf.getvalue()
    else:
        payload = [{c: _json_value(row.get(c)) for c in columns} for row in rows]
        text = json.dumps(payload, indent=2) + "\n"
    if out_path is None or out_path == "-":
        sys.stdout.write(text)
    else:
        with open(out_path, "w", newline="") as fh:
            fh.write(text)


def _worker_count(requested: int | None) -> int:
    if requested is not None:
        if requested < 1:
            raise ConfigError("--workers must be >= 1")
        return requested
    env = os.environ.get("QUADNET_WORKERS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ConfigError(f"QUADNET_WORKERS={env!r} is not an integer") from None


def _model_params(args, alpha: float) -> ModelParams:
    try:
        return ModelParams(
            alpha=alpha,
            kappa_star=args.kappa_star,
            kappa=args.kappa,
            lam=getattr(args, "lam", 0.0),
            Delta=args.delta_noise,
            tau=getattr(args, "tau", 0.0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# curve


_CURVE_COLUMNS = [
    "mode", "alpha", "kappa_star", "kappa", "lambda", "Delta", "tau",
    "delta_bar", "eps_bar", "m", "q", "test_error", "train_loss_density",
    "zero_mass", "replicon_margin", "residual", "converged",
]


def cmd_curve(args) -> tuple[list[str], list[dict], bool]:
    grid = sorted(_parse_grid(args.alpha_grid, "alpha"))
    if args.mode == "interpolator" and getattr(args, "lam", 0.0) != 0.0:
        raise ConfigError("interpolator mode requires --lambda 0")
    p = _model_params(args, grid[0])
    fps = sweep_alpha(p, grid, mode=args.mode, damping=args.damping, tol=args.tol)
    rows = []
    ok = True
    base = {
        "mode": args.mode, "kappa_star": args.kappa_star, "kappa": args.kappa,
        "lambda": args.lam, "Delta": args.delta_noise, "tau": args.tau,
    }
    for alpha, fp in zip(grid, fps):
        row = dict(base, alpha=alpha, converged=fp.converged)
        if fp.converged:
            pp = ModelParams(alpha=alpha, kappa_star=args.kappa_star,
                             kappa=args.kappa, lam=args.lam,
                             Delta=args.delta_noise, tau=args.tau)
            obs = observables(fp, pp)
            row.update(
                delta_bar=fp.delta_bar, eps_bar=fp.eps_bar,
                m=fp.state.m, q=fp.state.q,
                test_error=obs.test_error,
                train_loss_density=obs.train_loss_density,
                zero_mass=obs.zero_mass,
                replicon_margin=fp.replicon_margin,
                residual=fp.residual,
            )
        else:
            ok = False
            print(f"curve: no convergence at alpha={alpha:.6g}", file=sys.stderr)
        rows.append(row)
    return _CURVE_COLUMNS, rows, ok


# ---------------------------------------------------------------------------
# thresholds


_THRESHOLD_COLUMNS = [
    "kappa_star", "Delta", "lambda_bar",
    "alpha_inter", "alpha_strong", "alpha_weak_bar", "converged",
]


def cmd_thresholds(args) -> tuple[list[str], list[dict], bool]:
    grid = _parse_grid(args.kappa_star, "kappa_star")
    ok = True
    rows = []
    for ks in grid:
        row = {"kappa_star": ks, "Delta": args.delta_noise,
               "lambda_bar": args.lambda_bar, "converged": True}
        try:
            if args.delta_noise > 0:
                row["alpha_inter"] = thresholds.interpolation_threshold(
                    ks, args.delta_noise).alpha_value
            else:
                row["alpha_inter"] = thresholds.interpolation_threshold_noiseless(
                    ks).alpha_value
            row["alpha_strong"] = thresholds.strong_recovery_threshold(ks).alpha_value
            row["alpha_weak_bar"] = thresholds.weak_threshold(
                args.lambda_bar, args.delta_noise)
        except (ValueError, RuntimeError) as exc:
            row["converged"] = False
            ok = False
            print(f"thresholds: kappa_star={ks:.6g} failed: {exc}", file=sys.stderr)
        rows.append(row)
    return _THRESHOLD_COLUMNS, rows, ok


# ---------------------------------------------------------------------------
# spectrum


_SPECTRUM_COLUMNS = [
    "mode", "alpha", "kappa_star", "kappa", "lambda", "Delta", "tau",
    "widening", "row_type", "x", "value",
]


def cmd_spectrum(args) -> tuple[list[str], list[dict], bool]:
    if (args.widening is None) == (args.alpha is None):
        raise ConfigError("spectrum needs exactly one of --widening or --alpha")
    n_points = args.grid_points
    if n_points < 2:
        raise ConfigError("--grid-points must be >= 2")
    rows = []
    if args.widening is not None:
        if args.widening < 0:
            raise ConfigError("--widening must be nonnegative")
        law = spectral.spectral_law(args.kappa_star, args.widening)
        base = {"kappa_star": args.kappa_star, "widening": args.widening}
        for loc, mass in law.atoms:
            rows.append(dict(base, row_type="atom", x=loc, value=mass))
        for lo, hi in law.bulks:
            for x in np.linspace(lo, hi, n_points):
                rows.append(dict(base, row_type="density", x=float(x),
                                 value=float(spectral.density(x, law))))
        return _SPECTRUM_COLUMNS, rows, True

    p = _model_params(args, args.alpha)
    if args.mode == "interpolator" and p.lam != 0.0:
        raise ConfigError("interpolator mode requires --lambda 0")
    from .state_evolution import solve_fixed_point, solve_interpolator_limit

    if args.mode == "interpolator":
        fp = solve_interpolator_limit(p, tol=args.tol)
    else:
        fp = solve_fixed_point(p, damping=args.damping, tol=args.tol)
    obs = observables(fp, p)
    base = {
        "mode": fp.mode, "alpha": args.alpha, "kappa_star": args.kappa_star,
        "kappa": args.kappa, "lambda": p.lam, "Delta": p.Delta, "tau": p.tau,
    }
    rows.append(dict(base, row_type="zero_atom", x=0.0, value=obs.zero_mass))
    eps_hat = fp.eps_bar if fp.mode == "interpolator" else p.lambda_tilde * fp.eps_bar
    law = spectral.spectral_law(p.kappa_star, max(fp.delta_bar, 1e-9))
    sv_top = math.sqrt(max(law.support_top - eps_hat, 0.0)) or 1.0
    for x in np.linspace(0.0, 1.05 * sv_top, n_points)[1:]:
        rows.append(dict(base, row_type="sv_density", x=float(x),
                         value=float(obs.sv_density(x))))
    return _SPECTRUM_COLUMNS, rows, True


# ---------------------------------------------------------------------------
# simulate / compare


def _sim_job(payload: dict) -> dict:
    """One finite-size solver run (top-level for process-pool pickling)."""
    p = ModelParams(alpha=payload["alpha"], kappa_star=payload["kappa_star"],
                    kappa=payload["kappa"], lam=payload["lambda"],
                    Delta=payload["Delta"], tau=payload["tau"])
    d = payload["d"]
    out = {"failed": False, "test_error": math.nan, "rank": None, "error": ""}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ds = simulator.generate_dataset(
                d, payload["n"], payload["m_star"], p.Delta,
                seed=payload["seed"], mode=payload["sensing"])
            if payload["solver"] == "gamp":
                s_hat, _ = simulator.gamp_run(
                    ds, p, max_iter=payload["max_iter"], tol=payload["tol"],
                    damping=payload["damping"])
            elif payload["solver"] == "prox":
                s_hat = simulator.prox_gradient_solve(
                    ds, p, max_iter=payload["max_iter"], tol=payload["tol"])
            else:
                w = simulator.gd_train(ds, m=payload["m"], lam=p.lam,
                                       eta=payload["eta"], T=payload["steps"],
                                       seed=payload["seed"])
                s_hat = w.T @ w / math.sqrt(payload["m"] * d)
        test_error, sv = simulator.empirical_observables(s_hat, ds.target_matrix)
        out["test_error"] = test_error
        out["rank"] = int(np.count_nonzero(sv > simulator.RANK_RTOL * max(sv[0], 1e-300)))
    except (simulator.SimulationDivergenceError,
            simulator.SolverExhaustionError,
            ValueError) as exc:
        out["failed"] = True
        out["error"] = str(exc)
    return out


def _sim_payloads(args, grid) -> list[dict]:
    if args.d < 20:
        raise ConfigError(f"simulation needs d >= 20, got {args.d}")
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    if args.solver == "gd" and args.sensing != "gaussian":
        raise ConfigError("gd solves the network problem: --sensing gaussian required")
    if args.solver in ("gamp", "prox") and args.lam <= 0 and args.tau <= 0:
        raise ConfigError(f"{args.solver} needs --lambda > 0 or --tau > 0")
    m_star = int(round(args.kappa_star * args.d))
    if m_star < 1:
        raise ConfigError(f"kappa_star*d = {args.kappa_star * args.d:.3g} "
                          "gives an empty teacher")
    m = int(round(args.kappa * args.d))
    payloads = []
    for gi, alpha in enumerate(grid):
        n = int(round(alpha * args.d ** 2))
        if n < 1:
            raise ConfigError(f"alpha={alpha:.6g} gives an empty sample at d={args.d}")
        for seed in range(args.seeds):
            payloads.append({
                "grid_index": gi, "alpha": alpha, "kappa_star": args.kappa_star,
                "kappa": args.kappa, "lambda": args.lam, "Delta": args.delta_noise,
                "tau": args.tau, "d": args.d, "n": n, "m_star": m_star, "m": m,
                "seed": seed, "sensing": args.sensing, "solver": args.solver,
                "max_iter": args.max_iter, "tol": args.tol,
                "damping": args.damping, "eta": args.eta, "steps": args.steps,
            })
    return payloads


def _run_jobs(payloads, workers: int) -> list[dict]:
    if workers <= 1 or len(payloads) <= 1:
        results = []
        for i, job in enumerate(payloads):
            results.append(_sim_job(job))
            print(f"simulate: finished run {i + 1}/{len(payloads)}", file=sys.stderr)
        return results
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_sim_job, payloads))
    print(f"simulate: finished {len(payloads)} runs on {workers} workers",
          file=sys.stderr)
    return results


_SIMULATE_COLUMNS = [
    "solver", "sensing", "d", "n", "seed", "alpha", "kappa_star", "kappa",
    "lambda", "Delta", "tau", "test_error", "rank", "failed", "error",
]


def cmd_simulate(args) -> tuple[list[str], list[dict], bool]:
    grid = _parse_grid(args.alpha_grid, "alpha")
    _model_params(args, grid[0])  # validate parameter ranges early
    payloads = _sim_payloads(args, grid)
    results = _run_jobs(payloads, _worker_count(args.workers))
    rows = []
    ok = True
    for job, res in zip(payloads, results):
        ok = ok and not res["failed"]
        rows.append({
            "solver": job["solver"], "sensing": job["sensing"], "d": job["d"],
            "n": job["n"], "seed": job["seed"], "alpha": job["alpha"],
            "kappa_star": job["kappa_star"], "kappa": job["kappa"],
            "lambda": job["lambda"], "Delta": job["Delta"], "tau": job["tau"],
            "test_error": res["test_error"], "rank": res["rank"],
            "failed": res["failed"], "error": res["error"],
        })
    return _SIMULATE_COLUMNS, rows, ok


_COMPARE_COLUMNS = [
    "solver", "sensing", "d", "n_seeds", "alpha", "kappa_star", "kappa",
    "lambda", "Delta", "tau", "mode", "theory_test_error",
    "sim_mean", "sim_std", "z_score", "failed_seeds",
]


def cmd_compare(args) -> tuple[list[str], list[dict], bool]:
    grid = sorted(_parse_grid(args.alpha_grid, "alpha"))
    if args.seeds < 2:
        raise ConfigError("compare needs --seeds >= 2 for a standard error")
    p = _model_params(args, grid[0])
    fps = sweep_alpha(p, grid, mode=args.mode, damping=0.5, tol=1e-8)
    theory = []
    for alpha, fp in zip(grid, fps):
        if fp.converged:
            pp = ModelParams(alpha=alpha, kappa_star=p.kappa_star, kappa=p.kappa,
                             lam=p.lam, Delta=p.Delta, tau=p.tau)
            theory.append(observables(fp, pp).test_error)
        else:
            theory.append(math.nan)
    sensings = ["gaussian", "goe"] if args.sensing == "both" else [args.sensing]
    rows = []
    ok = all(math.isfinite(t) for t in theory)
    for sensing in sensings:
        sub_args = argparse.Namespace(**{**vars(args), "sensing": sensing})
        payloads = _sim_payloads(sub_args, grid)
        results = _run_jobs(payloads, _worker_count(args.workers))
        for gi, alpha in enumerate(grid):
            vals = [res["test_error"]
                    for job, res in zip(payloads, results)
                    if job["grid_index"] == gi and not res["failed"]]
            n_fail = args.seeds - len(vals)
            ok = ok and n_fail == 0
            mean = float(np.mean(vals)) if vals else math.nan
            std = float(np.std(vals, ddof=1)) if len(vals) >= 2 else math.nan
            if vals and std > 0:
                z = (mean - theory[gi]) / (std / math.sqrt(len(vals)))
            elif vals:
                z = 0.0 if mean == theory[gi] else math.inf
            else:
                z = math.nan
            rows.append({
                "solver": args.solver, "sensing": sensing, "d": args.d,
                "n_seeds": len(vals), "alpha": alpha,
                "kappa_star": args.kappa_star, "kappa": args.kappa,
                "lambda": args.lam, "Delta": args.delta_noise, "tau": args.tau,
                "mode": args.mode, "theory_test_error": theory[gi],
                "sim_mean": mean, "sim_std": std, "z_score": z,
                "failed_seeds": n_fail,
            })
    return _COMPARE_COLUMNS, rows, ok


# ---------------------------------------------------------------------------
# parser


def _add_model_flags(sp, with_lambda=True):
    sp.add_argument("--kappa-star", type=float, required=True,
                    help="teacher width ratio m*/d")
    sp.add_argument("--kappa", type=float, default=1.0,
                    help="student width ratio m/d (default 1)")
    if with_lambda:
        sp.add_argument("--lambda", dest="lam", type=float, default=0.0,
                        help="l2 regularization strength (default 0)")
    sp.add_argument("--delta-noise", type=float, default=0.0,
                    help="label noise variance Delta (default 0)")
    sp.add_argument("--tau", type=float, default=0.0,
                    help="Frobenius regularization strength (default 0)")


def _add_output_flags(sp):
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.add_argument("--out", default=None, help="output path (default stdout)")


def _add_solver_flags(sp):
    sp.add_argument("--damping", type=float, default=0.5,
                    help="state-evolution damping factor (default 0.5)")
    sp.add_argument("--tol", type=float, default=1e-8,
                    help="convergence tolerance (default 1e-8)")


def _add_sim_flags(sp):
    sp.add_argument("--d", type=int, required=True, help="matrix dimension (>= 20)")
    sp.add_argument("--seeds", type=int, default=8, help="number of seeds (default 8)")
    sp.add_argument("--solver", choices=("gamp", "prox", "gd"), default="gamp")
    sp.add_argument("--sensing", choices=("gaussian", "goe", "both"),
                    default="goe", help="sensing ensemble (default goe)")
    sp.add_argument("--max-iter", type=int, default=4000,
                    help="solver iteration budget (default 4000)")
    sp.add_argument("--eta", type=float, default=20.0,
                    help="gd per-sample learning rate (default 20)")
    sp.add_argument("--steps", type=int, default=10000,
                    help="gd step budget (default 10000)")
    sp.add_argument("--workers", type=int, default=None,
                    help="process count (default: QUADNET_WORKERS or 1)")


def _build_parser() -> _Parser:
    parser = _Parser(prog="quadnet",
                     description="Asymptotics and finite-size experiments for "
                                 "l2-regularized quadratic matrix sensing.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("curve", help="state-evolution learning curve")
    sp.add_argument("--alpha-grid", required=True,
                    help="'lo:hi:num' or comma list of sample ratios n/d^2")
    _add_model_flags(sp)
    sp.add_argument("--mode", choices=("regularized", "interpolator"),
                    default="regularized")
    _add_solver_flags(sp)
    _add_output_flags(sp)
    sp.set_defaults(func=cmd_curve)

    sp = sub.add_parser("thresholds", help="phase-transition thresholds")
    sp.add_argument("--kappa-star", required=True,
                    help="'lo:hi:num' or comma list of teacher width ratios")
    sp.add_argument("--delta-noise", type=float, default=0.0)
    sp.add_argument("--lambda-bar", type=float, default=0.0,
                    help="small-rank-limit regularization for alpha_weak_bar")
    _add_output_flags(sp)
    sp.set_defaults(func=cmd_thresholds)

    sp = sub.add_parser("spectrum", help="minimizer singular-value density "
                                         "or raw widened eigenvalue law")
    _add_model_flags(sp)
    sp.add_argument("--alpha", type=float, default=None,
                    help="solve the state evolution at this sample ratio")
    sp.add_argument("--widening", type=float, default=None,
                    help="emit the raw law at this semicircle radius instead")
    sp.add_argument("--mode", choices=("regularized", "interpolator"),
                    default="regularized")
    sp.add_argument("--grid-points", type=int, default=512)
    _add_solver_flags(sp)
    _add_output_flags(sp)
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("simulate", help="finite-size solver runs")
    sp.add_argument("--alpha-grid", required=True)
    _add_model_flags(sp)
    _add_sim_flags(sp)
    sp.add_argument("--damping", type=float, default=1.0,
                    help="gamp damping factor (default 1.0, adaptive)")
    sp.add_argument("--tol", type=float, default=1e-10,
                    help="solver tolerance (default 1e-10)")
    _add_output_flags(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("compare", help="theory vs simulation table")
    sp.add_argument("--alpha-grid", required=True)
    _add_model_flags(sp)
    sp.add_argument("--mode", choices=("regularized", "interpolator"),
                    default="regularized")
    _add_sim_flags(sp)
    sp.add_argument("--damping", type=float, default=1.0,
                    help="gamp damping factor (default 1.0, adaptive)")
    sp.add_argument("--tol", type=float, default=1e-10,
                    help="solver tolerance (default 1e-10)")
    _add_output_flags(sp)
    sp.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        columns, rows, ok = args.func(args)
        _write_table(columns, rows, args.format, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
