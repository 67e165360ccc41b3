"""Monte Carlo comparison of LHSpline variants against parametric baselines.

Each replicate simulates i.i.d. EGPD data, runs every requested estimator on
the same sample and records return-level and quantile estimates with interval
endpoints. Results are tidy rows, one per (replicate, estimator, method,
target).
"""
from __future__ import annotations

import hashlib
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import evt
from .density import SIM_OBS_PER_YEAR
from .errors import DataError, NumericalError
from .pipeline import LHSplineConfig, fit_lhspline
from .uncertainty import conditional_simulate, interval

log = logging.getLogger(__name__)

ESTIMATORS = ("LHS", "LHS-er", "LHS-boot", "LHS-ladj", "GEV", "GPD",
              "EGPD-oracle", "Gamma")
DEFAULT_P_GRID = (0.001, 0.005, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7,
                  0.8, 0.9, 0.95, 0.99, 0.995, 0.999)
COLUMNS = ("replicate", "estimator", "method", "target", "estimate", "lo", "hi",
           "truth", "status")
_DENSITY_ESTIMATORS = ("LHS", "LHS-er", "LHS-boot", "LHS-ladj", "EGPD-oracle", "Gamma")


@dataclass(frozen=True)
class StudyConfig:
    n_obs: int = 18250
    params: tuple = (0.8, 8.5, 0.2)
    n_replicates: int = 20
    estimators: tuple = ESTIMATORS
    T_grid: tuple = (25, 50, 100)
    p_grid: tuple = DEFAULT_P_GRID
    seed: int = 0
    level: float = 0.90
    intervals: bool = True
    M: int = 1000
    B: int = 200
    gpd_quantile: float = 0.95
    lambda_factor: float = 0.05
    workers: int = 1

    def __post_init__(self):
        if self.n_obs < 365:
            raise ValueError("n_obs must be at least 365")
        if self.n_replicates < 2:
            raise ValueError("n_replicates must be at least 2")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if any(not 0 < p < 1 for p in self.p_grid):
            raise ValueError("p_grid values must lie in (0, 1)")


def truth_values(config: StudyConfig) -> dict:
    """True return levels and quantiles from the analytic EGPD."""
    k, s, x = config.params
    out = {}
    for T in config.T_grid:
        out[f"RL{T}"] = float(evt.egpd_isf(1.0 / (T * SIM_OBS_PER_YEAR), k, s, x))
    for p in config.p_grid:
        out[f"Q{p:g}"] = float(evt.egpd_quantile(p, k, s, x))
    return out


def replicate_data(config: StudyConfig, r: int) -> np.ndarray:
    rng = np.random.default_rng([config.seed, r])
    return evt.egpd_simulate(config.n_obs, *config.params, rng)


def checksum(y: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(y, dtype="<f8").tobytes()).hexdigest()[:16]


@dataclass
class StudyResult:
    config: StudyConfig
    rows: list = field(repr=False)
    checksums: dict = field(repr=False)
    truth: dict = field(repr=False)
    seconds: float = 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(COLUMNS) + "\n")
        for row in self.rows:
            buf.write(_format_row(row) + "\n")
        return buf.getvalue()

    def checksums_csv(self) -> str:
        lines = ["replicate,sha256_16"]
        lines += [f"{r},{c}" for r, c in sorted(self.checksums.items())]
        return "\n".join(lines) + "\n"

    def estimates(self, estimator: str, target: str, method: str = "point") -> np.ndarray:
        """Estimates across replicates (nan where the estimator failed)."""
        by_rep = {r[0]: r[4] for r in self.rows
                  if r[1] == estimator and r[3] == target and r[2] == method}
        return np.array([by_rep.get(i, np.nan) for i in range(self.config.n_replicates)])

    def failures(self) -> list:
        return [r for r in self.rows if r[8] != "ok"]


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _format_row(row) -> str:
    out = []
    for v in row:
        s = _fmt(v)
        if "," in s or '"' in s:
            s = '"' + s.replace('"', '""') + '"'
        out.append(s)
    return ",".join(out)


def _failure(r, name, targets, truth, exc):
    msg = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
    return [(r, name, "point", t, math.nan, math.nan, math.nan, truth[t], msg)
            for t in targets]


def _lhs_config(name, config):
    if name == "LHS":
        return LHSplineConfig(extension_factor=1.0, lambda_mode="cv")
    if name == "LHS-er":
        return LHSplineConfig(lambda_mode="cv")
    if name == "LHS-boot":
        return LHSplineConfig(lambda_mode="cv", bias="bootstrap", B=config.B,
                              seed=config.seed)
    return LHSplineConfig(lambda_mode="adjusted", lambda_factor=config.lambda_factor)


def run_replicate(config: StudyConfig, r: int) -> tuple[list, str]:
    """All estimators on replicate ``r``; returns (rows, data checksum)."""
    truth = truth_values(config)
    y = replicate_data(config, r)
    rl_targets = [f"RL{T}" for T in config.T_grid]
    q_targets = [f"Q{p:g}" for p in config.p_grid]
    rows = []
    level = config.level

    def point(name, target, value):
        rows.append((r, name, "point", target, float(value), math.nan, math.nan,
                     truth[target], "ok"))

    def ci(name, method, target, est, lo, hi):
        rows.append((r, name, method, target, float(est), float(lo), float(hi),
                     truth[target], "ok"))

    def ci_failed(name, method, target, est, exc):
        rows.append((r, name, method, target, float(est), math.nan, math.nan,
                     truth[target], f"failed: {type(exc).__name__}: {exc}"))

    errors = (DataError, NumericalError, ValueError, ArithmeticError,
              np.linalg.LinAlgError)
    for name in config.estimators:
        targets = rl_targets + (q_targets if name in _DENSITY_ESTIMATORS else [])
        try:
            if name.startswith("LHS"):
                res = fit_lhspline(y, replace(_lhs_config(name, config), seed=config.seed + r))
                dens = res.density
                rls = dens.return_level(np.array(config.T_grid, dtype=float))
                qs = dens.quantile(np.array(config.p_grid))
                for t, v in zip(rl_targets, rls):
                    point(name, t, v)
                for t, v in zip(q_targets, qs):
                    point(name, t, v)
                if name == "LHS-ladj" and config.intervals:
                    try:
                        ens = conditional_simulate(res.penalized, M=config.M,
                                                   seed=config.seed * 100003 + r,
                                                   valid_quota=True)
                        for T, t, v in zip(config.T_grid, rl_targets, rls):
                            lo, hi = interval(ens, ("return_level", T), level)
                            ci(name, "cond-sim", t, v, lo, hi)
                    except errors as exc:
                        for t, v in zip(rl_targets, rls):
                            ci_failed(name, "cond-sim", t, v, exc)
            elif name == "GPD":
                u = float(np.quantile(y, config.gpd_quantile))
                ex = y[y > u]
                fit = evt.gpd_fit(ex, u, prior=evt.DEFAULT_PRIOR,
                                  exceed_rate=ex.size / y.size)
                _parametric_rows(fit, name, config, rl_targets, point, ci, ci_failed,
                                 errors)
            elif name == "GEV":
                fit = evt.gev_fit(evt.block_maxima(y, 365), prior=evt.DEFAULT_PRIOR)
                _parametric_rows(fit, name, config, rl_targets, point, ci, ci_failed,
                                 errors)
            else:
                fit = evt.egpd1_fit(y) if name == "EGPD-oracle" else evt.gamma_fit(y)
                for T, t in zip(config.T_grid, rl_targets):
                    point(name, t, fit.return_level(T))
                for p, t in zip(config.p_grid, q_targets):
                    point(name, t, fit.quantile(p))
        except errors as exc:
            log.info("replicate %d: %s failed: %s", r, name, exc)
            rows.extend(_failure(r, name, targets, truth, exc))
    return rows, checksum(y)


def _parametric_rows(fit, name, config, rl_targets, point, ci, ci_failed, errors):
    for T, t in zip(config.T_grid, rl_targets):
        est = float(fit.return_level(T))
        point(name, t, est)
        if not config.intervals:
            continue
        for method, fn in (("delta", evt.rl_interval_delta),
                           ("profile", evt.rl_interval_profile)):
            try:
                lo, hi = fn(fit, T, config.level)
                ci(name, method, t, est, lo, hi)
            except errors as exc:
                ci_failed(name, method, t, est, exc)


def run_study(config: StudyConfig) -> StudyResult:
    """Run every replicate; estimator failures are recorded, never raised."""
    t0 = time.perf_counter()
    reps = range(config.n_replicates)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outputs = list(pool.map(run_replicate, [config] * config.n_replicates, reps))
    else:
        outputs = []
        for r in reps:
            outputs.append(run_replicate(config, r))
            log.info("replicate %d done", r)
    rows, sums = [], {}
    for r, (rep_rows, cs) in zip(reps, outputs):
        rows.extend(rep_rows)
        sums[r] = cs
    return StudyResult(config=config, rows=rows, checksums=sums,
                       truth=truth_values(config),
                       seconds=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# summaries

@dataclass(frozen=True)
class CoverageCell:
    method: str
    target: str
    ecp: float
    mean_width: float
    n: int


_TABLE_METHODS = (("delta", "GPD", "Delta"), ("profile", "GPD", "Proflik"),
                  ("cond-sim", "LHS-ladj", "Cond-sim"))


def coverage_table(result: StudyResult, level: float | None = None) -> list:
    """ECP and mean width for each interval method and target.

    An interval that failed on a replicate counts as not covering.
    ``level`` is informational; intervals are computed at the study level.
    """
    cells = []
    methods = sorted({(row[1], row[2]) for row in result.rows if row[2] != "point"})
    targets = [t for t in result.truth if t.startswith("RL")]
    for est, method in methods:
        for t in targets:
            sel = [row for row in result.rows
                   if row[1] == est and row[2] == method and row[3] == t]
            if not sel:
                continue
            lo = np.array([row[5] for row in sel], dtype=float)
            hi = np.array([row[6] for row in sel], dtype=float)
            truth = result.truth[t]
            good = np.isfinite(lo) & np.isfinite(hi) | (np.isinf(lo) & np.isinf(hi))
            covered = good & (lo <= truth) & (truth <= hi)
            with np.errstate(invalid="ignore"):
                width = hi - lo
            finite = np.isfinite(width)
            mean_w = float(width[finite].mean()) if finite.any() else math.inf
            if np.any(np.isinf(width)):
                mean_w = math.inf
            cells.append(CoverageCell(f"{est}:{method}", t, float(covered.mean()),
                                      mean_w, len(sel)))
    return cells


def coverage_text(result: StudyResult) -> str:
    """Plain-text table with targets as rows and interval methods as columns."""
    cells = {(c.method, c.target): c for c in coverage_table(result)}
    cols = [(f"{est}:{m}", label) for m, est, label in _TABLE_METHODS]
    lines = ["Method".ljust(14) + "".join(label.ljust(18) for _, label in cols)]
    for T in result.config.T_grid:
        t = f"RL{T}"
        cells_txt = []
        for key, _ in cols:
            c = cells.get((key, t))
            cells_txt.append("n/a".ljust(18) if c is None
                             else f"{c.ecp:.2f} ({c.mean_width:.1f})".ljust(18))
        lines.append(f"{T}-yr RL ECP".ljust(14) + "".join(cells_txt))
    return "\n".join(line.rstrip() for line in lines) + "\n"


def coverage_csv(result: StudyResult) -> str:
    buf = io.StringIO()
    buf.write("method,target,ecp,mean_width,n\n")
    for c in coverage_table(result):
        buf.write(f"{c.method},{c.target},{c.ecp:.17g},{c.mean_width:.17g},{c.n}\n")
    return buf.getvalue()


def estimate_summary(result: StudyResult) -> str:
    """Per estimator and target: median, quartiles, median bias, failures (box data)."""
    buf = io.StringIO()
    buf.write("estimator,target,truth,n_ok,median,q25,q75,median_bias,"
              "median_abs_error\n")
    for est in result.config.estimators:
        for t, truth in result.truth.items():
            v = result.estimates(est, t)
            if np.all(np.isnan(v)) and not any(
                    row[1] == est and row[3] == t for row in result.rows):
                continue
            ok = v[np.isfinite(v)]
            if ok.size == 0:
                stats = [math.nan] * 5
            else:
                q25, med, q75 = np.quantile(ok, [0.25, 0.5, 0.75])
                stats = [med, q25, q75, med - truth, float(np.median(np.abs(ok - truth)))]
            buf.write(f"{est},{t},{truth:.17g},{ok.size},"
                      + ",".join(f"{s:.17g}" for s in stats) + "\n")
    return buf.getvalue()
