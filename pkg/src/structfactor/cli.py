"""Command-line front end.

Every subcommand validates its options, computes all artifacts in memory,
then writes them into the output directory through a temporary directory
and renames, so a failed run leaves no partial artifact set behind.

Exit codes: 0 success, 2 bad input or options, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

from . import cca, detrend, dynamics, simlab
from .detrend import OrderSpec, max_harmonics
from .errors import InputError, NumericError
from .panel import matrix_to_csv_text, panel_to_csv_text, read_csv, wide_csv_text

OUTPUT_ENV = "STRUCTFACTOR_OUTPUT_DIR"
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

logger = logging.getLogger("structfactor")


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_artifacts(output_dir: Path, artifacts: dict[str, str]) -> list[Path]:
    output_dir.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=output_dir))
    try:
        for name, text in artifacts.items():
            with open(staging / name, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        written = []
        for name in artifacts:
            os.replace(staging / name, output_dir / name)
            written.append(output_dir / name)
        return written
    finally:
        shutil.rmtree(staging, ignore_errors=True)


# --- validation -----------------------------------------------------------

def _validate(args) -> None:
    def need(cond, msg):
        if not cond:
            raise InputError(msg)

    if getattr(args, "period", None) is not None:
        need(args.period >= 2, f"--period must be >= 2, got {args.period}")
    if getattr(args, "k_max", None) is not None:
        need(0 <= args.k_max <= max_harmonics(args.period),
             f"--k-max must lie in [0, {max_harmonics(args.period)}] for period {args.period}")
    if getattr(args, "d_max", None) is not None:
        need(args.d_max >= 0, "--d-max must be >= 0")
    if getattr(args, "c_t", None) is not None:
        need(args.c_t > 0, "--c-t must be positive")
    if getattr(args, "d", None) is not None:
        need(args.d >= 0, "--d must be >= 0")
    if getattr(args, "k", None) is not None:
        need(0 <= args.k <= max_harmonics(args.period),
             f"--k must lie in [0, {max_harmonics(args.period)}] for period {args.period}")
    if getattr(args, "m", None) is not None:
        need(args.m >= 1, "--m must be >= 1")
    if getattr(args, "alpha", None) is not None:
        need(0 < args.alpha < 1, "--alpha must lie in (0, 1)")
    if getattr(args, "r", None) is not None:
        need(args.r >= 0, "--r must be >= 0")
    if getattr(args, "var_order", None) is not None:
        need(args.var_order >= 1, "--var-order must be >= 1")
    if getattr(args, "horizon", None) is not None:
        need(args.horizon >= 1, "--horizon must be >= 1")
    if getattr(args, "train_fraction", None) is not None:
        need(0 < args.train_fraction < 1, "--train-fraction must lie in (0, 1)")
    if getattr(args, "reps", None) is not None:
        need(args.reps >= 1, "--reps must be >= 1")
    if getattr(args, "workers", None) is not None:
        need(args.workers >= 1, "--workers must be >= 1")


def _fixed_order(args) -> OrderSpec | None:
    if args.d is None and args.k is None:
        return None
    if args.d is None or args.k is None:
        raise InputError("--d and --k must be given together")
    return OrderSpec(args.d, args.k, args.period)


def _decompose(panel, args):
    order = _fixed_order(args)
    if order is not None:
        return detrend.fit(panel, order), None
    return detrend.decompose(panel, k_max=args.k_max, d_max=args.d_max, c_T=args.c_t)


# --- subcommands ----------------------------------------------------------

def cmd_decompose(args) -> dict[str, str]:
    panel = read_csv(args.input, args.period)
    dec, table = _decompose(panel, args)
    out = {}
    if "csv" in args.emit:
        for name, values in (("trend", dec.trend), ("seasonal", dec.seasonal), ("irregular", dec.irregular)):
            out[f"{name}.csv"] = panel_to_csv_text(panel.with_values(values))
        out["theta.csv"] = matrix_to_csv_text(dec.theta, panel.series_names,
                                              dec.order.column_names(), corner="series")
    if "json" in args.emit:
        report = {"order": {"d": dec.order.d, "k": dec.order.k, "s": dec.order.s},
                  "T": panel.T, "p": panel.p}
        if table is not None:
            report["bic"] = table.to_report(panel.series_names)
        out["bic_report.json"] = dump_json(report)
    return out


def cmd_factors(args) -> dict[str, str]:
    panel = read_csv(args.input, args.period)
    if args.no_detrend:
        irregular, order_info = panel.values, None
    else:
        dec, _ = _decompose(panel, args)
        irregular = dec.irregular
        order_info = {"d": dec.order.d, "k": dec.order.k, "s": dec.order.s}
    if args.r is not None and args.r > panel.p:
        raise InputError(f"--r={args.r} exceeds the number of series {panel.p}")
    ffit = cca.fit_factors(irregular, m=args.m, r=args.r, alpha=args.alpha, regime=args.regime,
                           p_threshold=args.p_threshold)
    model = ffit.model
    names = panel.series_names
    out = {}
    if "csv" in args.emit:
        cols = [f"a{j + 1}" for j in range(panel.p)]
        out["loadings.csv"] = matrix_to_csv_text(model.loadings, names, cols, corner="series")
        out["whitener.csv"] = matrix_to_csv_text(model.whitener, names, names, corner="series")
        out["factors.csv"] = wide_csv_text(panel.index_name, panel.time_labels,
                                           [f"f{j + 1}" for j in range(model.r)], model.factors)
        out["noise_variates.csv"] = wide_csv_text(panel.index_name, panel.time_labels,
                                                  [f"e{j + 1}" for j in range(panel.p - model.r)],
                                                  model.noise_variates)
    if "json" in args.emit:
        report = ffit.report.to_report()
        report.update({
            "m": args.m,
            "r_used": model.r,
            "eigenvalues": [float(x) for x in model.eigenvalues],
            "order": order_info,
            "T": panel.T,
            "p": panel.p,
        })
        out["test_report.json"] = dump_json(report)
    return out


def _pipeline_kw(args) -> dict:
    return dict(order=_fixed_order(args), r=args.r, m=args.m, alpha=args.alpha, regime=args.regime,
                k_max=args.k_max, d_max=args.d_max, c_T=args.c_t)


def cmd_forecast(args) -> dict[str, str]:
    panel = read_csv(args.input, args.period)
    fitted = dynamics.fit_pipeline(panel, args.variant, args.var_order, **_pipeline_kw(args))
    result = fitted.forecast(args.horizon)
    labels = [str(h) for h in range(1, args.horizon + 1)]
    out = {}
    if "csv" in args.emit:
        out["forecast.csv"] = wide_csv_text("horizon", labels, panel.series_names, result.panel_forecast)
        if args.variant != "VEC":
            r = result.factor_forecast.shape[0]
            out["factor_forecast.csv"] = wide_csv_text("horizon", labels, [f"f{j + 1}" for j in range(r)],
                                                       result.factor_forecast)
    if "json" in args.emit:
        report = {"variant": args.variant, "horizon": args.horizon, "var_order": args.var_order,
                  "spectral_radius": fitted.var_model.spectral_radius,
                  "nonstationary": fitted.var_model.nonstationary}
        if fitted.decomposition is not None:
            o = fitted.decomposition.order
            report["order"] = {"d": o.d, "k": o.k, "s": o.s}
        if fitted.factor_fit is not None:
            report["r"] = fitted.factor_fit.model.r
        out["forecast_report.json"] = dump_json(report)
    return out


def cmd_evaluate(args) -> dict[str, str]:
    panel = read_csv(args.input, args.period)
    if args.tau0 is None and args.train_fraction is None:
        raise InputError("give --tau0 or --train-fraction")
    result = dynamics.rolling_evaluate(panel, h=args.horizon, tau0=args.tau0,
                                       train_fraction=args.train_fraction, variant=args.variant,
                                       var_order=args.var_order, **_pipeline_kw(args))
    return {"evaluation_report.json": dump_json(result.to_report())}


SIM_COLUMNS = ["experiment", "cell", "metric", "n", "n_failed", "status", "estimate", "se",
               "median", "q1", "q3", "mean", "var", "se_mean", "se_median"]


def _cell_text(cell: dict) -> str:
    return ";".join(f"{k}={cell[k]}" for k in sorted(cell))


def simulation_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SIM_COLUMNS)
    for row in rows:
        for m in row["metrics"]:
            rec = {"experiment": row["experiment"], "cell": _cell_text(row["cell"]),
                   "n_failed": row["n_failed"], "status": row["status"], **m}
            writer.writerow(["" if rec.get(c) is None else (repr(rec[c]) if isinstance(rec[c], float) else rec[c])
                             for c in SIM_COLUMNS])
    return buf.getvalue()


def samples_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["experiment", "cell", "metric", "index", "value"])
    for row in rows:
        for name, values in row.get("samples", {}).items():
            for i, v in enumerate(values):
                writer.writerow([row["experiment"], _cell_text(row["cell"]), name, i, repr(v)])
    return buf.getvalue()


def cmd_simulate(args) -> dict[str, str]:
    if not args.cell:
        raise InputError("give at least one --cell, e.g. --cell p=10,k0=5,T=500")
    grid = [simlab.parse_cell(c) for c in args.cell]
    rows = simlab.run_table(args.experiment, grid, args.reps, args.seed, args.workers,
                            keep_samples=args.samples)
    payload = {"experiment": args.experiment, "seed": args.seed, "replications": args.reps, "cells": rows}
    out = {}
    if "csv" in args.emit:
        out["simulation_table.csv"] = simulation_csv(rows)
        if args.samples:
            out["simulation_samples.csv"] = samples_csv(rows)
    if "json" in args.emit:
        out["simulation_table.json"] = dump_json(payload)
    return out


# --- parser ---------------------------------------------------------------

def _emit(text: str) -> tuple[str, ...]:
    parts = tuple(p.strip() for p in text.split(",") if p.strip())
    bad = [p for p in parts if p not in ("csv", "json")]
    if bad or not parts:
        raise argparse.ArgumentTypeError(f"--emit takes csv, json or csv,json; got {text!r}")
    return parts


def _add_common(sp, with_input: bool = True) -> None:
    if with_input:
        sp.add_argument("input", help="wide CSV: time label column, then one column per series")
        sp.add_argument("--period", type=int, default=12, help="known seasonal period s (default 12)")
    sp.add_argument("--output-dir", default=None,
                    help=f"artifact directory (default ${OUTPUT_ENV} or the current directory)")
    sp.add_argument("--emit", type=_emit, default=("csv", "json"), help="csv, json or csv,json")


def _add_orders(sp) -> None:
    sp.add_argument("--k-max", type=int, default=None, help="largest k searched (default ceil(s/2)-1)")
    sp.add_argument("--d-max", type=int, default=2, help="largest trend degree searched (default 2)")
    sp.add_argument("--c-t", type=float, default=None, help="BIC constant C_T (default log log T)")
    sp.add_argument("--d", type=int, default=None, help="fix the trend degree (with --k)")
    sp.add_argument("--k", type=int, default=None, help="fix the number of harmonic pairs (with --d)")


def _add_factor_opts(sp) -> None:
    sp.add_argument("--m", type=int, default=2, help="number of stacked lags (default 2)")
    sp.add_argument("--alpha", type=float, default=0.05, help="test level (default 0.05)")
    sp.add_argument("--regime", choices=cca.REGIMES, default="auto",
                    help="p-values from chi2, normal, or auto (chi2 when p <= --p-threshold)")
    sp.add_argument("--p-threshold", type=int, default=10)
    sp.add_argument("--r", type=int, default=None, help="fix the number of factors instead of testing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="structfactor",
                                     description="Trend/seasonal extraction and CCA factor modelling of panels.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("decompose", help="select orders by BIC and split into trend/seasonal/irregular")
    _add_common(sp)
    _add_orders(sp)
    sp.set_defaults(func=cmd_decompose)

    sp = sub.add_parser("factors", help="CCA factor extraction and the test for the number of factors")
    _add_common(sp)
    _add_orders(sp)
    _add_factor_opts(sp)
    sp.add_argument("--no-detrend", action="store_true", help="input is already the irregular panel")
    sp.set_defaults(func=cmd_factors)

    sp = sub.add_parser("forecast", help="fit the full pipeline and forecast h steps")
    _add_common(sp)
    _add_orders(sp)
    _add_factor_opts(sp)
    sp.add_argument("--variant", choices=dynamics.VARIANTS, default="GT2")
    sp.add_argument("--var-order", type=int, default=1)
    sp.add_argument("--horizon", type=int, default=1)
    sp.set_defaults(func=cmd_forecast)

    sp = sub.add_parser("evaluate", help="rolling-origin out-of-sample forecast error")
    _add_common(sp)
    _add_orders(sp)
    _add_factor_opts(sp)
    sp.add_argument("--variant", choices=dynamics.VARIANTS, default="GT2")
    sp.add_argument("--var-order", type=int, default=1)
    sp.add_argument("--h", "--horizon", dest="horizon", type=int, default=1)
    sp.add_argument("--tau0", type=int, default=None, help="first training length (1-based origin)")
    sp.add_argument("--train-fraction", type=float, default=None)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("simulate", help="Monte Carlo tables on the synthetic structural-factor model")
    _add_common(sp, with_input=False)
    sp.add_argument("--experiment", choices=simlab.EXPERIMENTS, required=True)
    sp.add_argument("--cell", action="append", default=[], help="grid cell, e.g. p=10,k0=5,T=500 (repeatable)")
    sp.add_argument("--reps", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--samples", action="store_true", help="also write raw per-replication values")
    sp.set_defaults(func=cmd_simulate, period=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    output_dir = Path(args.output_dir or os.environ.get(OUTPUT_ENV) or ".")
    try:
        _validate(args)
        artifacts = args.func(args)
        for path in write_artifacts(output_dir, artifacts):
            logger.info("wrote %s", path)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
