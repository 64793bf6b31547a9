"""Command-line frontend: estimate / infer / simulate / bench.

File conventions: panels are CSV with a header row and a leading time-index
column; matrices are dense CSV with the column index as header; every artifact
embeds the resolved configuration (JSON key for .json files, a leading
'# config:' comment for .csv files). Outputs are deterministic for a fixed
configuration and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, debias, factor, simlab, tuning
from .errors import (
    HifreqError,
    IngestError,
    InvalidInputError,
    InvalidParameterError,
    NumericFailureError,
)
from .glasso import SolveOptions
from .quadcov import PathPanel, panel_from_returns, realized_cov

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_NONCONVERGENCE = 4


def _fmt(x: float) -> str:
    """17 significant digits: round-trips any float64 exactly."""
    return format(float(x), ".17g")


def ingest_panel(path, fmt: str = "csv", returns: bool = False) -> PathPanel:
    """Read and validate a level panel (or per-interval returns).

    Expects a header row; the first column is the time index 0..n or
    equidistant timestamps (validated to 1e-9 relative). Lines starting with
    '#' are ignored. Errors carry the 1-based file line number.
    """
    if fmt != "csv":
        raise InvalidParameterError(f"unsupported panel format {fmt!r}")
    rows = []
    times = []
    width = None
    header_seen = False
    with open(path, newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if not record or (record[0].startswith("#")):
                continue
            if not header_seen:
                header_seen = True
                width = len(record)
                if width < 2:
                    raise IngestError(
                        f"{path}: header must contain a time column and at "
                        f"least one series (line {lineno})", row=lineno)
                continue
            if len(record) != width:
                raise IngestError(
                    f"{path}: ragged row at line {lineno} "
                    f"({len(record)} fields, expected {width})", row=lineno)
            try:
                values = [float(v) for v in record]
            except ValueError as exc:
                raise IngestError(
                    f"{path}: unparsable number at line {lineno}: {exc}",
                    row=lineno) from exc
            if any(math.isnan(v) or math.isinf(v) for v in values):
                raise IngestError(
                    f"{path}: non-finite value at line {lineno}", row=lineno)
            times.append(values[0])
            rows.append(values[1:])
    if not header_seen:
        raise IngestError(f"{path}: empty file")
    if len(rows) < 2:
        raise IngestError(f"{path}: need at least two observation rows")
    times_arr = np.asarray(times)
    steps = np.diff(times_arr)
    if np.any(steps <= 0):
        raise IngestError(f"{path}: time column must be strictly increasing")
    scale = float(np.mean(steps))
    if np.max(np.abs(steps - scale)) > 1e-9 * max(abs(scale), 1.0):
        raise IngestError(f"{path}: observation grid is not equidistant")
    data = np.asarray(rows)
    if returns:
        return panel_from_returns(data)
    return PathPanel(data)


def write_panel(panel: PathPanel, path) -> None:
    """Emit a panel in the ingestible CSV layout (bit-exact round trip)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{j}" for j in range(panel.dim)])
        for h in range(panel.n + 1):
            writer.writerow([h] + [_fmt(v) for v in panel.values[h]])


def _config_comment(config: dict) -> str:
    return "# config: " + json.dumps(config, sort_keys=True)


def write_matrix_csv(path, matrix, config: dict) -> None:
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        fh.write(_config_comment(config) + "\n")
        writer = csv.writer(fh)
        writer.writerow([str(j) for j in range(matrix.shape[1])])
        for row in matrix:
            writer.writerow([_fmt(v) for v in row])


def write_triplets_csv(path, matrix, config: dict) -> None:
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        fh.write(_config_comment(config) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "value"])
        for i, j in zip(*np.nonzero(matrix)):
            writer.writerow([int(i), int(j), _fmt(matrix[i, j])])


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        header_seen = False
        for record in csv.reader(fh):
            if not record or record[0].startswith("#"):
                continue
            if not header_seen:
                header_seen = True
                continue
            rows.append([float(v) for v in record])
    return np.asarray(rows)


def _write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("HIFREQ_THREADS")
    return int(env) if env else 1


def _estimate_pipeline(args):
    """Shared by estimate/infer: ingest, factor fit, BIC-selected solve."""
    panel_y = ingest_panel(args.y, returns=args.returns)
    opts = SolveOptions(max_outer_iters=args.max_iters, tol=args.tol)
    if args.x is not None:
        panel_x = ingest_panel(args.x, returns=args.returns)
        fit_result = factor.fit(panel_y, panel_x)
        target = fit_result.sigma_z
    else:
        panel_x = None
        fit_result = None
        target = realized_cov(panel_y)
    grid = tuning.lambda_grid(target, panel_y.n, m=args.grid_size,
                              epsilon=args.epsilon,
                              use_correlation_threshold=args.correlation_threshold)
    trace, sol = tuning.select(target, panel_y.n, grid, opts, weighted=True)
    if fit_result is not None:
        sigma_y = factor.assemble_sigma_y(fit_result, sol)
    else:
        sigma_y = sol.w
    return panel_y, panel_x, fit_result, target, grid, trace, sol, sigma_y


def _trace_payload(grid, trace) -> dict:
    return {
        "grid": [float(v) for v in grid.values],
        "lambda_max": grid.lambda_max,
        "lambda_min": grid.lambda_min,
        "epsilon": grid.epsilon,
        "records": [
            {
                "lambda": rec.lam,
                "bic": None if math.isnan(rec.bic_value) else rec.bic_value,
                "nonzero_upper": rec.nonzero_upper_count,
                "kkt_residual": rec.solution.kkt_residual if rec.solution else None,
                "converged": rec.solution.converged if rec.solution else None,
                "error": rec.error,
            }
            for rec in trace.records
        ],
        "selected_index": trace.argmin_index,
        "selected_lambda": trace.selected.lam,
    }


def cmd_estimate(args) -> int:
    config = _resolved_config(args, ["y", "x", "returns", "grid_size", "epsilon",
                                     "correlation_threshold", "tol", "max_iters"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, _, _, target, grid, trace, sol, sigma_y = _estimate_pipeline(args)
    write_matrix_csv(out / "theta_z.csv", sol.theta, config)
    write_triplets_csv(out / "theta_z_triplets.csv", sol.theta, config)
    write_matrix_csv(out / "sigma_y.csv", sigma_y, config)
    payload = {"config": config, "bic": _trace_payload(grid, trace),
               "kkt_residual": sol.kkt_residual, "converged": sol.converged,
               "iterations": sol.iters}
    _write_json(out / "bic.json", payload)
    return EXIT_OK if sol.converged else EXIT_NONCONVERGENCE


def _parse_pairs(text: str):
    pairs = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(",")
        if len(parts) != 2:
            raise InvalidParameterError(f"malformed pair {chunk!r}; use 'i,j;k,l'")
        pairs.append((int(parts[0]), int(parts[1])))
    if not pairs:
        raise InvalidParameterError("no pairs given")
    return pairs


def cmd_infer(args) -> int:
    config = _resolved_config(args, ["y", "x", "returns", "grid_size", "epsilon",
                                     "correlation_threshold", "tol", "max_iters",
                                     "pairs", "level", "simultaneous_draws", "seed"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = _parse_pairs(args.pairs)
    panel_y, panel_x, fit_result, target, grid, trace, sol, _ = _estimate_pipeline(args)
    deb = debias.debiased(sol.theta, target, sol.lam)
    beta_hat = fit_result.beta_hat if fit_result is not None else None
    ctx = debias.build_avar_context(panel_y, panel_x, beta_hat, sol.theta)
    report = debias.entrywise_ci(deb, ctx, pairs, args.level)
    sim_quantile = None
    if args.simultaneous_draws:
        sim_quantile = debias.multiplier_sup_quantile(
            ctx, pairs, args.level, args.simultaneous_draws, args.seed)
    payload = {
        "config": config,
        "selected_lambda": sol.lam,
        "entries": [
            {"i": e.i, "j": e.j, "point": e.point, "se": e.se,
             "ci_low": e.ci_low, "ci_high": e.ci_high, "level": e.level}
            for e in report.entries
        ],
        "simultaneous_quantile": sim_quantile,
        "num_multiplier_draws": args.simultaneous_draws or 0,
    }
    _write_json(out / "infer.json", payload)
    return EXIT_OK if sol.converged else EXIT_NONCONVERGENCE


def _default_methods(design: int):
    methods = ["rc", "glasso", "wglasso", "f-glasso", "f-wglasso"]
    if design == 1:
        methods.append("f-thr")
    return methods


def cmd_simulate(args) -> int:
    config = _resolved_config(args, ["design", "d", "n", "reps", "seed",
                                     "methods", "substeps", "alpha", "levels",
                                     "design2_literal"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    methods = args.methods.split(",") if args.methods else _default_methods(args.design)
    design = simlab.SimDesign(
        design=args.design, alpha=args.alpha, substeps=args.substeps,
        design2_precision_reading=not args.design2_literal)
    levels = tuple(float(v) for v in args.levels.split(","))
    metrics = simlab.mc_run(design, args.d, args.n, methods, args.reps,
                            parallelism=_threads(args), seed=args.seed,
                            levels=levels)
    with open(out / "replications.csv", "w", newline="") as fh:
        fh.write(_config_comment(config) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["rep", "method", "prec_err_op_inf", "prec_err_op_2",
                         "sigma_err_linf", "theta_z_err_op_2", "selected_lambda"])
        for rep in range(metrics.reps):
            for m in metrics.methods:
                tz = metrics.theta_z_err_2.get(m, None)
                lam = metrics.selected_lambda.get(m, None)
                writer.writerow([
                    rep, m,
                    _fmt(metrics.prec_err_inf[m][rep]),
                    _fmt(metrics.prec_err_2[m][rep]),
                    _fmt(metrics.sigma_err_linf[m][rep]),
                    _fmt(tz[rep]) if tz is not None else "",
                    _fmt(lam[rep]) if lam is not None else "",
                ])
    summary = metrics.aggregate()
    summary["config"] = config
    summary["failures"] = [
        {"rep": rep, "method": m, "message": msg}
        for rep, m, msg in metrics.failures
    ]
    _write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_bench(args) -> int:
    config = _resolved_config(args, ["d", "n", "seed", "grid_size"])
    design = simlab.SimDesign(design=1)
    rng = np.random.default_rng(args.seed)
    panel_y, panel_x, _ = simlab.simulate_panel(design, args.d, args.n, rng)
    fit_result = factor.fit(panel_y, panel_x)
    grid = tuning.lambda_grid(fit_result.sigma_z, args.n, m=args.grid_size)
    rows = []
    warm = None
    for lam in reversed(grid.values):
        opts = SolveOptions(warm_start=warm)
        start = time.perf_counter()
        sol = factor.residual_precision(fit_result, lam, opts)
        elapsed = time.perf_counter() - start
        warm = sol
        rows.append({"lambda": float(lam), "seconds": elapsed,
                     "sweeps": sol.iters, "kkt_residual": sol.kkt_residual})
    payload = {"config": config, "timings": rows,
               "total_seconds": sum(r["seconds"] for r in rows)}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "bench.json", payload)
    print(f"{'lambda':>12} {'seconds':>10} {'sweeps':>7} {'kkt':>10}")
    for r in rows:
        print(f"{r['lambda']:12.6f} {r['seconds']:10.4f} {r['sweeps']:7d} "
              f"{r['kkt_residual']:10.2e}")
    return EXIT_OK


def _resolved_config(args, keys) -> dict:
    resolved = {k: getattr(args, k) for k in keys if hasattr(args, k)}
    resolved["command"] = args.command
    resolved["version"] = __version__
    resolved["threads"] = _threads(args) if hasattr(args, "threads") else 1
    return resolved


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hifreq",
        description="Sparse precision-matrix estimation and inference for "
                    "high-frequency path data.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_estimation(p):
        p.add_argument("--y", required=True, help="CSV panel of the target process")
        p.add_argument("--x", default=None, help="optional CSV panel of known factors")
        p.add_argument("--returns", action="store_true",
                       help="inputs hold per-interval returns; cumulate to levels")
        p.add_argument("--grid-size", type=int, default=10, dest="grid_size")
        p.add_argument("--epsilon", type=float, default=None,
                       help="grid ratio lambda_min/lambda_max "
                            "(default sqrt(log(d)/n))")
        p.add_argument("--correlation-threshold", action="store_true",
                       dest="correlation_threshold",
                       help="anchor lambda_max at the correlation scale")
        p.add_argument("--tol", type=float, default=1e-6)
        p.add_argument("--max-iters", type=int, default=1000, dest="max_iters")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", required=True)

    p_est = sub.add_parser("estimate", help="BIC-selected precision estimate")
    add_common_estimation(p_est)
    p_est.set_defaults(func=cmd_estimate)

    p_inf = sub.add_parser("infer", help="entrywise confidence intervals")
    add_common_estimation(p_inf)
    p_inf.add_argument("--pairs", required=True,
                       help="semicolon-separated 0-based entries, e.g. '1,2;3,4'")
    p_inf.add_argument("--level", type=float, default=0.95)
    p_inf.add_argument("--simultaneous-draws", type=int, default=0,
                       dest="simultaneous_draws",
                       help="multiplier draws for the sup quantile (0 = skip)")
    p_inf.add_argument("--seed", type=int, default=0)
    p_inf.set_defaults(func=cmd_infer)

    p_sim = sub.add_parser("simulate", help="Monte Carlo study")
    p_sim.add_argument("--design", type=int, choices=(1, 2), required=True)
    p_sim.add_argument("--d", type=int, required=True)
    p_sim.add_argument("--n", type=int, required=True)
    p_sim.add_argument("--reps", type=int, required=True)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--methods", default=None,
                       help="comma-separated subset of: " + ",".join(simlab.METHODS))
    p_sim.add_argument("--substeps", type=int, default=10)
    p_sim.add_argument("--alpha", type=float, default=2.5)
    p_sim.add_argument("--levels", default="0.95,0.99")
    p_sim.add_argument("--design2-literal", action="store_true",
                       dest="design2_literal",
                       help="read the graph matrix as the residual covariance")
    p_sim.add_argument("--threads", type=int, default=None)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_bench = sub.add_parser("bench", help="solver timing table")
    p_bench.add_argument("--d", type=int, default=40)
    p_bench.add_argument("--n", type=int, default=390)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--grid-size", type=int, default=10, dest="grid_size")
    p_bench.add_argument("--out", default=None)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def _error_payload(exc: Exception, code: int) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc),
                       "exit_code": code}, sort_keys=True)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (IngestError, InvalidInputError, InvalidParameterError) as exc:
        print(_error_payload(exc, EXIT_INPUT), file=sys.stderr)
        return EXIT_INPUT
    except (NumericFailureError, HifreqError) as exc:
        print(_error_payload(exc, EXIT_NUMERIC), file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(_error_payload(exc, EXIT_INPUT), file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
