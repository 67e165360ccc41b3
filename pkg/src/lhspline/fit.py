"""Penalized Poisson smoothing of log-histogram counts.

The objective over the knot values ``g`` of the log intensity is

    sum_j (exp(g_j) - z_j g_j) + lam * g' K g

with ``K`` the natural-spline roughness matrix. Its Newton (Fisher scoring)
step is the weighted smoothing problem ``(W + 2 lam K) g = W u`` with
``W = diag(exp(g))`` and working response ``u = g + (z - exp(g)) / exp(g)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kernels
from .binning import LogHistogram
from .errors import NumericalError
from .spline import SplineModel, penalty_matrix

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100
DEFAULT_ADJUST = 0.05
GRID_SIZE = 40
GRID_DECADES = 8.0


@dataclass(frozen=True)
class PenalizedFit:
    hist: LogHistogram = field(repr=False)
    spline: SplineModel = field(repr=False)
    lam: float
    weights: np.ndarray = field(repr=False)
    pseudo_obs: np.ndarray = field(repr=False)
    converged: bool
    iterations: int
    objective: float
    lambda_cv: float | None = None
    trace: tuple = field(default=(), repr=False)

    @property
    def values(self) -> np.ndarray:
        return self.spline.values

    def summary(self) -> str:
        left, right = self.spline.boundary_slopes
        lines = [
            f"lambda_cv      {self.lambda_cv:.17g}" if self.lambda_cv is not None
            else "lambda_cv      n/a",
            f"lambda_used    {self.lam:.17g}",
            f"iterations     {self.iterations}",
            f"converged      {self.converged}",
            f"objective      {self.objective:.17g}",
            f"left_slope     {left:.17g}",
            f"right_slope    {right:.17g}",
        ]
        return "\n".join(lines) + "\n"


def initial_values(counts) -> np.ndarray:
    return np.log(np.maximum(np.asarray(counts, dtype=float), 0.5))


def objective(hist: LogHistogram, lam: float, g) -> float:
    """Penalized negative Poisson log likelihood (log z! dropped)."""
    return float(kernels.objective(np.asarray(hist.counts, dtype=float),
                                   np.diff(hist.knots), lam, g))


def gradient(hist: LogHistogram, lam: float, g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    h = np.diff(hist.knots)
    kg = kernels.q_times(kernels.interior_second_derivs(g, h), h)
    return np.exp(g) - hist.counts + 2.0 * lam * kg


def irls_fit(hist: LogHistogram, lam: float, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER, start=None,
             lambda_cv: float | None = None) -> PenalizedFit:
    """Minimize the penalized objective at fixed ``lam`` by step-halved IRLS."""
    if not lam > 0 or not np.isfinite(lam):
        raise ValueError("lambda must be positive and finite")
    z = np.asarray(hist.counts, dtype=float)
    h = np.diff(hist.knots)
    g0 = initial_values(z) if start is None else np.asarray(start, dtype=float)
    g, obj, it, status, trace = kernels.irls(z, h, float(lam), g0, tol, max_iter)
    if status == kernels.STATUS_NONFINITE:
        raise NumericalError(f"IRLS produced non-finite values at lambda={lam:g}",
                             trace)
    converged = status == kernels.STATUS_CONVERGED
    if status == kernels.STATUS_STALLED:
        # No step can lower the objective: accept if stationary, else diverged.
        grad = gradient(hist, lam, g)
        if np.max(np.abs(grad)) <= 1e-6 * (1.0 + z.max()):
            converged = True
        else:
            raise NumericalError(
                f"IRLS diverged at lambda={lam:g} after {it} iterations", trace)
    w = np.exp(g)
    u = g + (z - w) / w
    return PenalizedFit(hist=hist, spline=SplineModel.from_values(hist.knots, g),
                        lam=float(lam), weights=w, pseudo_obs=u,
                        converged=converged, iterations=int(it),
                        objective=float(obj), lambda_cv=lambda_cv,
                        trace=tuple(trace))


def _system(fit: PenalizedFit, penalty=None):
    k = penalty_matrix(fit.hist.knots).matrix if penalty is None else penalty
    m = 2.0 * fit.lam * k
    m[np.diag_indices_from(m)] += fit.weights
    return cho_factor(m, check_finite=False)


def hat_diagonal(fit: PenalizedFit, penalty=None) -> np.ndarray:
    """Diagonal of the smoother A = (W + 2 lam K)^{-1} W at convergence."""
    sw = np.sqrt(fit.weights)
    cf = _system(fit, penalty)
    return sw * np.diag(cho_solve(cf, np.diag(sw), check_finite=False))


def smoother_trace(fit: PenalizedFit, penalty=None) -> float:
    """tr((W + 2 lam K)^{-1} W) at the converged weights."""
    return float(np.sum(hat_diagonal(fit, penalty)))


def gcv_score(fit: PenalizedFit, penalty=None) -> tuple[float, float]:
    """GCV on the working linear problem; returns (score, trace).

    Degenerates as lambda -> 0 when the histogram has many empty bins:
    interpolating the occupied bins sends the weighted residual sum to zero
    while the trace stays near the number of occupied bins.
    """
    n = fit.hist.n_bins
    tr = smoother_trace(fit, penalty)
    resid = fit.pseudo_obs - fit.values
    rss = float(np.sum(fit.weights * resid ** 2))
    return n * rss / (n - tr) ** 2, tr


def acv_score(fit: PenalizedFit, penalty=None) -> tuple[float, float]:
    """Approximate leave-one-bin-out Poisson deviance; returns (score, trace).

    The deleted-bin log intensity comes from the working linear problem,
    ``g_j - a_jj / (1 - a_jj) * (u_j - g_j)``, and is scored against the
    held-out count with the Poisson log likelihood.
    """
    a = hat_diagonal(fit, penalty)
    g = fit.values
    z = np.asarray(fit.hist.counts, dtype=float)
    g_del = g - a / (1.0 - a) * (fit.pseudo_obs - g)
    with np.errstate(over="ignore"):
        score = float(np.sum(np.exp(g_del) - z * g_del))
    return score, float(a.sum())


CRITERIA = {"acv": acv_score, "gcv": gcv_score}


def pilot_lambda(hist: LogHistogram) -> float:
    """Scale-matched pilot: N over the roughness of a fitted normal log-density.

    The normal is moment-matched to the binned log data; its log density has
    constant curvature, so the pilot does not depend on how far the range is
    widened beyond the data.
    """
    z = np.asarray(hist.counts, dtype=float)
    x = hist.knots
    mean = np.sum(z * x) / z.sum()
    var = np.sum(z * (x - mean) ** 2) / z.sum()
    g0 = -0.5 * (x - mean) ** 2 / var
    rough = penalty_matrix(x).quad(g0)
    return hist.n_bins / rough


def default_grid(hist: LogHistogram, size: int = GRID_SIZE,
                 decades: float = GRID_DECADES) -> np.ndarray:
    centre = np.log10(pilot_lambda(hist))
    return np.logspace(centre - decades / 2, centre + decades / 2, size)


@dataclass(frozen=True)
class LambdaSelection:
    lambda_cv: float
    grid: np.ndarray = field(repr=False)
    scores: np.ndarray = field(repr=False)
    traces: np.ndarray = field(repr=False)
    fit: PenalizedFit = field(repr=False)

    @property
    def index(self) -> int:
        return int(np.argmin(self.scores))


def select_lambda(hist: LogHistogram, grid=None, criterion: str = "acv",
                  tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER) -> LambdaSelection:
    """Pick lambda on a log grid by minimizing a cross-validation score.

    ``criterion`` is ``"acv"`` (approximate leave-one-bin-out deviance, the
    default) or ``"gcv"`` (generalized cross validation on the working
    problem).
    """
    score_fn = CRITERIA[criterion]
    grid = default_grid(hist) if grid is None else np.asarray(grid, dtype=float)
    if grid.size < 10 or np.any(grid <= 0):
        raise ValueError("lambda grid needs >= 10 positive points")
    order = np.argsort(grid)[::-1]
    penalty = penalty_matrix(hist.knots).matrix
    scores = np.full(grid.size, np.inf)
    traces = np.full(grid.size, np.nan)
    fits = [None] * grid.size
    start = None
    for i in order:
        try:
            fit = irls_fit(hist, grid[i], tol=tol, max_iter=max_iter, start=start)
        except NumericalError as exc:
            log.debug("lambda %g failed: %s", grid[i], exc)
            continue
        scores[i], traces[i] = score_fn(fit, penalty)
        fits[i] = fit
        start = fit.values
    if not np.any(np.isfinite(scores)):
        raise NumericalError("all fits on the lambda grid diverged")
    best = int(np.argmin(scores))
    lam = float(grid[best])
    f = fits[best]
    best_fit = PenalizedFit(hist=f.hist, spline=f.spline, lam=f.lam,
                            weights=f.weights, pseudo_obs=f.pseudo_obs,
                            converged=f.converged, iterations=f.iterations,
                            objective=f.objective, lambda_cv=lam, trace=f.trace)
    return LambdaSelection(lambda_cv=lam, grid=grid, scores=scores,
                           traces=traces, fit=best_fit)


def lambda_adjust(selection: LambdaSelection, factor: float = DEFAULT_ADJUST,
                  tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER) -> PenalizedFit:
    """Refit at ``factor * lambda_cv``; smaller lambda follows the tail closer."""
    if not 0 < factor <= 1:
        raise ValueError("factor must lie in (0, 1]")
    if factor == 1:
        return selection.fit
    return irls_fit(selection.fit.hist, factor * selection.lambda_cv, tol=tol,
                    max_iter=max_iter, start=selection.fit.values,
                    lambda_cv=selection.lambda_cv)


def bootstrap_bias_correct(fit: PenalizedFit, B: int = 200, seed: int = 0,
                           max_fail: float = 0.05, tol: float = DEFAULT_TOL,
                           max_iter: int = DEFAULT_MAX_ITER) -> SplineModel:
    """Parametric Poisson bootstrap estimate of the pointwise bias, subtracted.

    Replicate ``b`` draws counts from ``Poisson(exp(g_hat))`` with generator
    seeded by ``(seed, b)`` and refits at the same lambda.
    """
    if B < 100:
        raise ValueError("B must be at least 100")
    g_hat = fit.values
    mu = np.exp(g_hat)
    hist = fit.hist
    total = np.zeros_like(g_hat)
    ok = 0
    failed = 0
    for b in range(B):
        rng = np.random.default_rng([seed, b])
        z_star = rng.poisson(mu)
        h_star = _with_counts(hist, z_star)
        try:
            f = irls_fit(h_star, fit.lam, tol=tol, max_iter=max_iter, start=g_hat)
        except NumericalError:
            failed += 1
            continue
        if not f.converged:
            failed += 1
            continue
        total += f.values
        ok += 1
    if failed > max_fail * B:
        raise NumericalError(f"{failed} of {B} bootstrap refits diverged")
    bias = total / ok - g_hat
    corrected = SplineModel.from_values(hist.knots, g_hat - bias)
    before = np.sign(fit.spline.boundary_slopes)
    after = np.sign(corrected.boundary_slopes)
    if after[1] != before[1] or (not hist.censored and after[0] != before[0]):
        raise NumericalError("bootstrap correction flipped a boundary slope sign")
    return corrected


def _with_counts(hist: LogHistogram, counts) -> LogHistogram:
    counts = np.asarray(counts)
    return LogHistogram(breaks=hist.breaks, counts=counts, knots=hist.knots,
                        n_total=int(counts.sum()), bin_width=hist.bin_width,
                        extension_factor=hist.extension_factor,
                        support_low=hist.support_low, data_min=hist.data_min,
                        data_max=hist.data_max)
