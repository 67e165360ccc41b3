"""Posterior conditional simulation for a fitted log-histospline.

Under the Gaussian approximation at the converged IRLS problem, the knot
values have posterior ``MVN(g_hat, (W + Gamma)^{-1})`` with prior precision
``Gamma = 2 lam K``. Draws are produced by simulating prior and pseudo data,
smoothing, and adding the smoothing error to ``g_hat``.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

from .density import SIM_OBS_PER_YEAR, DensityFit, normalize
from .errors import NumericalError
from .fit import PenalizedFit
from .spline import SplineModel, penalty_matrix

log = logging.getLogger(__name__)

NULL_SPACE_SD = 1e6
MIN_VALID_FRACTION = 0.8


def affine_basis(knots) -> np.ndarray:
    """Orthonormal N x 2 basis of constants and centred, scaled knots."""
    t = np.asarray(knots, dtype=float)
    c = (t - t.mean()) / t.std()
    basis = np.column_stack([np.ones_like(c), c])
    return basis / np.linalg.norm(basis, axis=0)


@dataclass(frozen=True)
class Smoother:
    """The linear map u -> (W + Gamma)^{-1} W u and the prior square root."""

    weights: np.ndarray
    precision: np.ndarray
    factor: tuple = field(repr=False)
    prior_sqrt: np.ndarray = field(repr=False)
    null_basis: np.ndarray = field(repr=False)

    @classmethod
    def from_fit(cls, fit: PenalizedFit, weights=None) -> "Smoother":
        w = fit.weights if weights is None else np.asarray(weights, dtype=float)
        gamma = 2.0 * fit.lam * penalty_matrix(fit.hist.knots).matrix
        a = gamma.copy()
        a[np.diag_indices_from(a)] += w
        try:
            cf = cho_factor(a, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"W + Gamma not positive definite at lambda={fit.lam:g} "
                f"(cond ~ {np.linalg.cond(a):.3g})") from exc
        null = affine_basis(fit.hist.knots)
        proj = np.eye(w.size) - null @ null.T
        evals, evecs = eigh(proj @ gamma @ proj)
        keep = np.argsort(evals)[2:]
        if np.any(evals[keep] <= 0):
            raise NumericalError("prior precision has fewer than N - 2 positive "
                                 "eigenvalues")
        root = evecs[:, keep] / np.sqrt(evals[keep])
        return cls(weights=w, precision=gamma, factor=cf, prior_sqrt=root,
                   null_basis=null)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        wu = self.weights[:, None] * u if u.ndim == 2 else self.weights * u
        return cho_solve(self.factor, wu, check_finite=False)

    def posterior_cov(self) -> np.ndarray:
        a = self.precision.copy()
        a[np.diag_indices_from(a)] += self.weights
        return np.linalg.inv(a)


def _draw_errors(smoother: Smoother, start: int, M: int, seed: int) -> np.ndarray:
    n = smoother.weights.size
    m_curv = smoother.prior_sqrt.shape[1]
    curv = np.empty((n, M))
    null = np.empty((n, M))
    noise = np.empty((n, M))
    sd_obs = 1.0 / np.sqrt(smoother.weights)
    for m in range(M):
        rng = np.random.default_rng([seed, start + m])
        # 1. prior draw: curvature part plus a wide proper affine part
        curv[:, m] = smoother.prior_sqrt @ rng.standard_normal(m_curv)
        null[:, m] = smoother.null_basis @ (NULL_SPACE_SD * rng.standard_normal(2))
        # 2. pseudo-observation noise, u* = g* + noise
        noise[:, m] = sd_obs * rng.standard_normal(n)
    # 3. g_hat* = S u*. S reproduces affine functions exactly, so the affine
    # part is carried through analytically instead of being smoothed at 1e6
    # scale, which would swamp the result in rounding error.
    smoothed = null + smoother(curv + noise)
    # 4. e = g* - g_hat*
    return (curv + null) - smoothed


def _normalize_draw(row, hist, wet_fraction):
    try:
        return normalize(SplineModel.from_values(hist.knots, row), hist,
                         wet_fraction=wet_fraction)
    except NumericalError:
        return None


@dataclass
class PosteriorEnsemble:
    draws: np.ndarray
    lam: float
    base_fit: DensityFit
    seed: int
    penalized: PenalizedFit = field(repr=False)
    n_drawn: int = 0
    requested: int = 0
    precomputed: list | None = field(default=None, repr=False)

    @property
    def acceptance_rate(self) -> float:
        drawn = self.n_drawn or len(self.draws)
        return self.n_valid / drawn

    @cached_property
    def densities(self) -> list:
        """Normalized density per draw, ``None`` where a tail is not integrable."""
        if self.precomputed is not None:
            return self.precomputed
        hist = self.penalized.hist
        wf = self.base_fit.wet_fraction
        out = [_normalize_draw(row, hist, wf) for row in self.draws]
        n_bad = sum(d is None for d in out)
        if n_bad:
            log.info("%d of %d posterior draws rejected (non-integrable tail)",
                     n_bad, len(out))
        return out

    @property
    def n_valid(self) -> int:
        return sum(d is not None for d in self.densities)

    def to_csv(self) -> str:
        buf = io.StringIO()
        knots = self.penalized.hist.knots
        buf.write("draw," + ",".join(f"{k:.17g}" for k in knots) + "\n")
        for i, row in enumerate(self.draws):
            buf.write(f"{i}," + ",".join(f"{v:.17g}" for v in row) + "\n")
        return buf.getvalue()


def conditional_simulate(fit: PenalizedFit, M: int = 1000, seed: int = 0,
                         wet_fraction: float = 1.0, weights=None,
                         valid_quota: bool = False, max_draws: int | None = None,
                         check: bool = True) -> PosteriorEnsemble:
    """Approximate posterior draws of the knot log intensities.

    Draw ``m`` uses a generator seeded by ``(seed, m)``. With
    ``valid_quota`` draws whose density has a non-integrable tail are
    rejected and sampling continues, in order, until ``M`` valid draws exist
    or ``max_draws`` (default ``20 * M``) have been made. That samples the
    Gaussian posterior restricted to proper densities.
    """
    if check and M < 100:
        raise ValueError("M must be at least 100")
    if not fit.converged:
        raise NumericalError("conditional simulation needs a converged fit")
    smoother = Smoother.from_fit(fit, weights=weights)
    base = normalize(fit.spline, fit.hist, wet_fraction=wet_fraction)
    if not valid_quota:
        errors = _draw_errors(smoother, 0, M, seed)
        # 5. posterior draw = g_hat + e
        draws = fit.values[None, :] + errors.T
        return PosteriorEnsemble(draws=draws, lam=fit.lam, base_fit=base,
                                 seed=seed, penalized=fit, n_drawn=M, requested=M)
    cap = 20 * M if max_draws is None else max_draws
    rows, dens = [], []
    start = 0
    while len(rows) < M and start < cap:
        batch = min(max(M - len(rows), 50), cap - start)
        errors = _draw_errors(smoother, start, batch, seed)
        for row in fit.values[None, :] + errors.T:
            d = _normalize_draw(row, fit.hist, wet_fraction)
            if d is not None and len(rows) < M:
                rows.append(row)
                dens.append(d)
        start += batch
    if len(rows) < M:
        log.warning("only %d valid draws after %d attempts", len(rows), start)
    return PosteriorEnsemble(draws=np.array(rows), lam=fit.lam, base_fit=base,
                             seed=seed, penalized=fit, n_drawn=start, requested=M,
                             precomputed=dens)


def evaluate(density: DensityFit, functional, obs_per_year: float = SIM_OBS_PER_YEAR):
    """Evaluate a named functional ``(kind, arg)`` or a callable on a density."""
    if callable(functional):
        return functional(density)
    kind, arg = functional
    if kind == "return_level":
        return density.return_level(arg, obs_per_year)
    if kind == "quantile":
        return density.quantile(arg)
    if kind == "return_period":
        return density.return_period(arg, obs_per_year)
    raise ValueError(f"unknown functional {kind!r}")


def interval(ensemble: PosteriorEnsemble, functional, level: float = 0.90,
             obs_per_year: float = SIM_OBS_PER_YEAR) -> tuple[float, float]:
    """Equal-tailed interval of a functional across the valid draws.

    Array-valued functionals (e.g. return levels at several periods) give
    arrays of endpoints.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    dens = [d for d in ensemble.densities if d is not None]
    wanted = ensemble.requested or len(ensemble.draws)
    if not dens or len(dens) < MIN_VALID_FRACTION * wanted:
        raise NumericalError(f"only {len(dens)} of {wanted} draws are valid")
    vals = np.array([evaluate(d, functional, obs_per_year) for d in dens], dtype=float)
    lo, hi = np.quantile(vals, [(1 - level) / 2, (1 + level) / 2], axis=0)
    if vals.ndim > 1:
        return lo, hi
    return float(lo), float(hi)
