"""Command-line interface: ``pptrend fit | simulate | bands | plot-data``.

Exit codes follow the BSD sysexits convention: 64 for usage errors, 65 for
malformed input data, 66 for missing input files.  ``fit`` exits with 2 when
the optimizer does not converge.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .covariance import band_intensity, band_trend, sandwich_parts
from .errors import ConfigurationError, DataFormatError, PPTrendError, SingularInformationError
from .io import AnalysisConfig, FitDocument, build_series, read_patterns
from .model import fit as fit_model, predict
from .simulate import FIT_TRENDS, run_study, scenario

EX_USAGE = 64
EX_DATAERR = 65
EX_NOINPUT = 66
EX_NOT_CONVERGED = 2

log = logging.getLogger("pptrend")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _UsageError(message)


def _fmt(x) -> str:
    return repr(float(x))


def _require(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    return path


def _cmd_fit(args) -> int:
    config = AnalysisConfig.load(_require(args.config))
    patterns = read_patterns(
        _require(args.events),
        mode=args.mode,
        domain=config.domain,
        day_boundary=args.day_boundary,
        clock_scale=args.clock_scale,
    )
    series = build_series(patterns, config)
    basis = config.basis()
    grid = config.grid(basis)
    res = fit_model(series, basis, grid, config.fit_config())
    parts, omega_error = None, None
    if res.converged:
        try:
            parts = sandwich_parts(series, res, grid)
        except SingularInformationError as exc:
            omega_error = str(exc)
            log.warning("%s", exc)
    FitDocument.from_fit(res, config, parts, omega_error).write(args.out)
    if not res.converged:
        log.error("optimizer did not converge: gradient norm %.3g after %d iterations", res.gradient_norm, res.iterations)
        return EX_NOT_CONVERGED
    return 0


def _cmd_simulate(args) -> int:
    model = scenario(args.scenario, n=args.n, seed=args.seed)
    summary = run_study(model, args.reps, workers=args.workers, label=args.scenario, fit_trend=args.fit_trend)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "n", "target", "bias", "sd", "rmse"])
        for rec in summary.as_records(args.scenario):
            w.writerow([rec["scenario"], rec["n"], rec["target"], _fmt(rec["bias"]), _fmt(rec["sd"]), _fmt(rec["rmse"])])
    return 0


def _load_doc(path):
    doc = FitDocument.read(_require(path))
    return doc, doc.to_fit_result()


def _cmd_bands(args) -> int:
    doc, res = _load_doc(args.fit)
    Om = doc.omega_matrix()
    if Om is None:
        raise ConfigurationError("fit document has no covariance; bands are unavailable")
    if args.grid < 2:
        raise ConfigurationError("--grid must be at least 2")
    basis = res.basis
    us = np.linspace(basis.lower, basis.upper, args.grid)
    ts = np.arange(1, res.n + 1)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "j", "t", "u", "estimate", "lo", "hi"])
        if res.params.q:
            est, lo, hi = band_trend(res, Om, ts, alpha=args.alpha)
            for t, e, a, b in zip(ts, est, lo, hi):
                w.writerow(["trend", "", int(t), "", _fmt(e), _fmt(a), _fmt(b)])
        for j in range(1, res.d + 1):
            est, lo, hi = band_intensity(res, Om, j, us, alpha=args.alpha, single_factor=args.single_factor)
            for u, e, a, b in zip(us, est, lo, hi):
                w.writerow(["intensity", j, "", _fmt(u), _fmt(e), _fmt(a), _fmt(b)])
    return 0


def _cmd_plot_data(args) -> int:
    _, res = _load_doc(args.fit)
    if args.grid < 2:
        raise ConfigurationError("--grid must be at least 2")
    pred = predict(res)
    us = np.linspace(res.basis.lower, res.basis.upper, args.grid)
    ts = np.arange(1, res.n + 1)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["curve", "j", "x", "value"])
        trend = np.exp(pred.trend(ts)) if res.params.q else np.ones(ts.size)
        for t, v in zip(ts, trend):
            w.writerow(["trend", "", int(t), _fmt(v)])
        for j in range(1, res.d + 1):
            for u, v in zip(us, pred.intensity(j, us)):
                w.writerow(["intensity", j, _fmt(u), _fmt(v)])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pptrend", description="Trend and seasonality for point-process time series.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit the model to an events file")
    p.add_argument("--events", required=True, help="events CSV")
    p.add_argument("--config", required=True, help="JSON analysis configuration")
    p.add_argument("--out", required=True, help="output fit document (JSON)")
    p.add_argument("--mode", choices=("presliced", "raw"), default="presliced")
    p.add_argument("--day-boundary", type=float, default=0.0, help="hours past midnight where a raw day starts")
    p.add_argument("--clock-scale", type=float, default=1.0, help="multiplier from hours to domain units")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("simulate", help="Monte Carlo error study for a reference scenario")
    p.add_argument("--scenario", choices=("i", "ii", "iii"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--fit-trend", choices=FIT_TRENDS, default="anchored")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("bands", help="pointwise confidence bands from a fit document")
    p.add_argument("--fit", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--grid", type=int, default=97, help="number of points on the domain")
    p.add_argument("--out", required=True)
    p.add_argument("--single-factor", action="store_true", help="use a single intensity factor in the delta method")
    p.set_defaults(func=_cmd_bands)

    p = sub.add_parser("plot-data", help="curves exp(c(t)) and season intensities for plotting")
    p.add_argument("--fit", required=True)
    p.add_argument("--grid", type=int, default=241)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return EX_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        sys.stderr.write(f"pptrend: cannot open {exc.filename or exc}\n")
        return EX_NOINPUT
    except DataFormatError as exc:
        sys.stderr.write(f"pptrend: {exc}\n")
        return EX_DATAERR
    except (ConfigurationError, ValueError) as exc:
        sys.stderr.write(f"pptrend: {exc}\n")
        return EX_USAGE
    except PPTrendError as exc:
        sys.stderr.write(f"pptrend: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
