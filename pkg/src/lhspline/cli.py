"""Command line interface: ``lhspline {fit,diagnose,returns,simulate,study}``.

Every command writes plain CSV/text files into an output directory (default
``$LHSPLINE_OUTPUT_DIR`` or ``./lhspline-out``). Errors are reported as a JSON
object on stderr with exit code 2 (usage), 3 (data) or 4 (numerical failure).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evt
from .density import STATION_OBS_PER_YEAR
from .errors import DataError, NumericalError
from .experiments import (StudyConfig, coverage_csv, coverage_text,
                          estimate_summary, run_study)
from .ingest import IngestConfig, parse_daily_csv, wet_subsample
from .pipeline import LHSplineConfig, fit_lhspline
from .uncertainty import conditional_simulate, interval

log = logging.getLogger("lhspline")

OUTPUT_ENV = "LHSPLINE_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
RL_PERIODS = tuple(range(2, 101))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _f(v) -> str:
    return f"{float(v):.17g}"


def _write(out: Path, name: str, text: str) -> None:
    with open(out / name, "w", newline="\n") as fh:
        fh.write(text)


def _probability(s):
    v = float(s)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1)")
    return v


def _positive_int(s):
    v = int(s)
    if v <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _add_input(p):
    p.add_argument("input", help="daily precipitation CSV")
    p.add_argument("--config", help="key = value ingest config file")
    p.add_argument("--unit", choices=("mm", "tenths_mm", "hundredths_inch"),
                   help="input unit (overrides the config file)")


def _add_lhs(p):
    p.add_argument("--n-bins", type=int, default=150)
    p.add_argument("--extension-factor", type=float, default=1.5)
    p.add_argument("--lambda-mode", choices=("cv", "adjusted", "fixed"),
                   default="adjusted")
    p.add_argument("--lambda-factor", type=float, default=0.05)
    p.add_argument("--lambda-value", type=float)
    p.add_argument("--criterion", choices=("acv", "gcv"), default="acv")
    p.add_argument("--bias", choices=("none", "bootstrap"), default="none")
    p.add_argument("--bootstrap-samples", type=int, default=200)
    p.add_argument("--censor-bound", type=float, default=0.0,
                   help="analyse only amounts above this bound (mm)")
    p.add_argument("--draws", type=int, default=1000,
                   help="conditional-simulation draws for intervals")
    p.add_argument("--obs-per-year", type=float, default=STATION_OBS_PER_YEAR)


def _add_common(p):
    p.add_argument("--output-dir", default=os.environ.get(OUTPUT_ENV, "lhspline-out"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--level", type=_probability, default=0.90)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lhspline", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit an LHSpline to a daily record")
    _add_input(p)
    _add_lhs(p)
    _add_common(p)
    p.add_argument("--periods", type=float, nargs="*", default=[25, 50, 100],
                   help="return periods listed in intervals.csv")

    p = sub.add_parser("returns", help="return periods of events, LHSpline vs GPD/EGPD")
    _add_input(p)
    _add_lhs(p)
    _add_common(p)
    p.add_argument("--event", type=float, nargs="+", required=True, help="amounts (mm)")
    p.add_argument("--threshold", type=float, help="GPD threshold (mm)")
    p.add_argument("--threshold-quantile", type=_probability, default=0.95,
                   help="GPD threshold as a wet-day quantile when --threshold is absent")
    p.add_argument("--periods", type=float, nargs="*", default=[25, 50, 100])

    p = sub.add_parser("diagnose", help="mean residual life and shape stability")
    _add_input(p)
    _add_common(p)
    p.add_argument("--u-min", type=float)
    p.add_argument("--u-max", type=float)
    p.add_argument("--n-u", type=_positive_int, default=40)

    p = sub.add_parser("simulate", help="write a synthetic daily EGPD record")
    _add_common(p)
    p.add_argument("--params", type=float, nargs=3, default=[0.8, 8.5, 0.2],
                   metavar=("KAPPA", "SIGMA", "XI"))
    p.add_argument("--start", default="1949-01-01")
    p.add_argument("--end", default="2016-12-31")
    p.add_argument("--wet-probability", type=_probability, default=0.276)
    p.add_argument("--resolution", type=float, default=0.0,
                   help="round amounts to this multiple (mm); 0 keeps full precision")
    p.add_argument("--name", default="simulated.csv")

    p = sub.add_parser("study", help="Monte Carlo comparison of estimators")
    _add_common(p)
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--full", action="store_true", help="100 replicates")
    p.add_argument("--n", type=int, default=18250)
    p.add_argument("--params", type=float, nargs=3, default=[0.8, 8.5, 0.2],
                   metavar=("KAPPA", "SIGMA", "XI"))
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--bootstrap-samples", type=int, default=200)
    p.add_argument("--no-intervals", action="store_true")
    p.add_argument("--workers", type=_positive_int, default=1)
    return parser


def _lhs_config(args) -> LHSplineConfig:
    try:
        return LHSplineConfig(n_bins=args.n_bins, extension_factor=args.extension_factor,
                              lambda_mode=args.lambda_mode,
                              lambda_factor=args.lambda_factor,
                              lambda_value=args.lambda_value, criterion=args.criterion,
                              bias=args.bias, B=args.bootstrap_samples, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load(args):
    config = IngestConfig.from_file(args.config) if args.config else IngestConfig()
    if args.unit:
        config = replace(config, unit=args.unit)
    return parse_daily_csv(args.input, config)


def _validate_lhs(args):
    if args.n_bins < 20:
        raise UsageError("--n-bins must be at least 20")
    if args.extension_factor < 1:
        raise UsageError("--extension-factor must be >= 1")
    if args.censor_bound < 0:
        raise UsageError("--censor-bound must be >= 0")
    if args.draws < 100:
        raise UsageError("--draws must be at least 100")
    if args.obs_per_year <= 0:
        raise UsageError("--obs-per-year must be positive")
    _lhs_config(args)


def _fit_station(args):
    series = _load(args)
    sample = wet_subsample(series, args.censor_bound)
    res = fit_lhspline(sample.amounts, _lhs_config(args), support_low=sample.support_low,
                       rate=sample.exceed_fraction)
    return series, sample, res


def _report(series, sample, res, args) -> str:
    d = res.density
    h = res.hist
    lines = [
        f"station        {series.station_id or 'n/a'}",
        f"records        {series.dates.size}",
        f"records_ok     {series.n_ok}",
        f"first_date     {series.dates[0]}",
        f"last_date      {series.dates[-1]}",
        f"wet_fraction   {_f(series.wet_fraction)}",
        f"support_low    {_f(sample.support_low)}",
        f"n_analysed     {sample.amounts.size}",
        f"exceed_rate    {_f(sample.exceed_fraction)}",
        f"obs_per_year   {_f(args.obs_per_year)}",
        f"n_bins         {h.n_bins}",
        f"extension      {_f(h.extension_factor)}",
        f"range_log      {_f(h.breaks[0])} {_f(h.breaks[-1])}",
        f"lambda_mode    {res.config.lambda_mode}",
        f"criterion      {res.config.criterion}",
        f"bias           {res.config.bias}",
    ]
    text = "\n".join(lines) + "\n" + res.penalized.summary()
    text += (f"tail_alpha     {_f(d.tail_index_alpha)}\n"
             f"implied_xi     {_f(d.implied_xi)}\n"
             f"log_norm_const {_f(d.log_norm_const)}\n"
             f"seed           {args.seed}\n")
    return text


def cmd_fit(args) -> int:
    _validate_lhs(args)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    series, sample, res = _fit_station(args)
    d = res.density
    ens = conditional_simulate(res.penalized, M=args.draws, seed=args.seed,
                               wet_fraction=sample.exceed_fraction, valid_quota=True)
    periods = np.array(RL_PERIODS, dtype=float)
    rl = d.return_level(periods, args.obs_per_year)
    lo, hi = interval(ens, ("return_level", periods), args.level, args.obs_per_year)
    rows = ["T_years,return_level_mm,lo,hi"]
    rows += [f"{int(T)},{_f(r)},{_f(a)},{_f(b)}" for T, r, a, b in zip(periods, rl, lo, hi)]
    _write(out, "return-levels.csv", "\n".join(rows) + "\n")
    rows = ["target,estimate,lo,hi,level,method,valid_draws,drawn"]
    for T in args.periods:
        est = d.return_level(T, args.obs_per_year)
        a, b = interval(ens, ("return_level", T), args.level, args.obs_per_year)
        rows.append(f"RL{T:g},{_f(est)},{_f(a)},{_f(b)},{_f(args.level)},cond-sim,"
                    f"{ens.n_valid},{ens.n_drawn}")
    _write(out, "intervals.csv", "\n".join(rows) + "\n")
    _write(out, "fit-report.txt", _report(series, sample, res, args)
           + f"draws_valid    {ens.n_valid}\ndraws_made     {ens.n_drawn}\n")
    _write(out, "density-grid.csv", d.grid())
    _write(out, "histogram.csv", res.hist.to_csv())
    return EXIT_OK


def cmd_returns(args) -> int:
    _validate_lhs(args)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    series, sample, res = _fit_station(args)
    d = res.density
    ens = conditional_simulate(res.penalized, M=args.draws, seed=args.seed,
                               wet_fraction=sample.exceed_fraction, valid_quota=True)
    wet = wet_subsample(series, 0.0)
    u = (args.threshold if args.threshold is not None
         else float(np.quantile(wet.amounts, args.threshold_quantile)))
    ex = wet.amounts[wet.amounts > u]
    gpd = evt.gpd_fit(ex, u, exceed_rate=ex.size / series.n_ok)
    egpd = evt.egpd1_fit(sample.amounts, exceed_rate=sample.exceed_fraction)
    egpd = _shift_egpd(egpd, sample)
    npy = args.obs_per_year
    rows = ["event_mm,method,return_period_years,lo,hi,level"]
    for y in args.event:
        t = d.return_period(y, npy)
        a, b = interval(ens, ("return_period", y), args.level, npy)
        rows.append(f"{_f(y)},LHSpline,{_f(t)},{_f(a)},{_f(b)},{_f(args.level)}")
        for name, fit in (("GPD", gpd), ("EGPD1", egpd)):
            est, a, b = evt.return_period_delta(fit, y, args.level, npy)
            rows.append(f"{_f(y)},{name},{_f(est)},{_f(a)},{_f(b)},{_f(args.level)}")
    _write(out, "return-periods.csv", "\n".join(rows) + "\n")
    rows = ["T_years,method,return_level_mm,lo,hi,level"]
    for T in args.periods:
        r = d.return_level(T, npy)
        a, b = interval(ens, ("return_level", T), args.level, npy)
        rows.append(f"{T:g},LHSpline,{_f(r)},{_f(a)},{_f(b)},{_f(args.level)}")
        r = gpd.return_level(T, npy)
        a, b = evt.rl_interval_delta(gpd, T, args.level, npy)
        rows.append(f"{T:g},GPD-delta,{_f(r)},{_f(a)},{_f(b)},{_f(args.level)}")
        try:
            a, b = evt.rl_interval_profile(gpd, T, args.level, npy)
            rows.append(f"{T:g},GPD-profile,{_f(r)},{_f(a)},{_f(b)},{_f(args.level)}")
        except NumericalError as exc:
            log.warning("profile interval at T=%g failed: %s", T, exc)
        rows.append(f"{T:g},EGPD1,{_f(egpd.return_level(T, npy))},nan,nan,"
                    f"{_f(args.level)}")
    _write(out, "return-levels.csv", "\n".join(rows) + "\n")
    rows = ["method,parameter,estimate,se"]
    for name, fit in (("GPD", gpd), ("EGPD1", egpd)):
        for (k, v), se in zip(fit.params.items(), fit.se):
            rows.append(f"{name},{k},{_f(v)},{_f(se)}")
    rows.append(f"GPD,threshold,{_f(u)},nan")
    rows.append(f"GPD,exceed_rate,{_f(gpd.exceed_rate)},nan")
    _write(out, "parameters.csv", "\n".join(rows) + "\n")
    _write(out, "fit-report.txt", _report(series, sample, res, args))
    return EXIT_OK


def _shift_egpd(fit, sample):
    """Under truncation the EGPD is fitted to the excess over the bound."""
    if sample.support_low <= 0:
        return fit
    return evt.egpd1_fit(sample.amounts, exceed_rate=sample.exceed_fraction,
                         shift=sample.support_low)


def cmd_diagnose(args) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    series = _load(args)
    wet = wet_subsample(series, 0.0).amounts
    lo = args.u_min if args.u_min is not None else float(np.quantile(wet, 0.75))
    hi = args.u_max if args.u_max is not None else float(np.quantile(wet, 0.995))
    if not lo < hi:
        raise UsageError("--u-min must be below --u-max")
    grid = np.linspace(lo, hi, args.n_u)
    mrl = evt.mean_residual_life(wet, grid, args.level)
    stab = evt.shape_stability(wet, grid, args.level)
    _write(out, "mean-residual-life.csv", mrl.to_csv())
    _write(out, "shape-stability.csv", stab.to_csv())
    dropped = sorted(set(mrl.dropped) | set(stab.dropped))
    _write(out, "diagnose-dropped.csv",
           "u\n" + "".join(f"{_f(u)}\n" for u in dropped))
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dates = np.arange(np.datetime64(args.start, "D"), np.datetime64(args.end, "D")
                      + np.timedelta64(1, "D"))
    if dates.size == 0:
        raise UsageError("--end must not precede --start")
    rng = np.random.default_rng(args.seed)
    wet = rng.random(dates.size) < args.wet_probability
    amounts = np.zeros(dates.size)
    amounts[wet] = evt.egpd_simulate(int(wet.sum()), *args.params, rng)
    if args.resolution > 0:
        amounts = np.round(amounts / args.resolution) * args.resolution
    buf = ["date,prcp_mm,quality"]
    buf += [f"{d},{_f(a)}," for d, a in zip(dates, amounts)]
    _write(out, args.name, "\n".join(buf) + "\n")
    return EXIT_OK


def cmd_study(args) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = StudyConfig(n_obs=args.n, params=tuple(args.params),
                          n_replicates=100 if args.full else args.replicates,
                          seed=args.seed, level=args.level,
                          intervals=not args.no_intervals, M=args.draws,
                          B=args.bootstrap_samples, workers=args.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    res = run_study(cfg)
    _write(out, "study.csv", res.to_csv())
    _write(out, "checksums.csv", res.checksums_csv())
    _write(out, "summary.csv", estimate_summary(res))
    _write(out, "coverage.csv", coverage_csv(res))
    _write(out, "coverage.txt", coverage_text(res))
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "returns": cmd_returns, "diagnose": cmd_diagnose,
            "simulate": cmd_simulate, "study": cmd_study}


def _fail(code: int, exc: BaseException) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (DataError, ValueError, OSError) as exc:
        return _fail(EXIT_DATA, exc)


if __name__ == "__main__":
    sys.exit(main())
