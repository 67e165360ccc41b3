"""Parametric extreme-value baselines and threshold diagnostics.

Families: GPD for threshold exceedances, GEV for block maxima, the extended
GPD with ``F(y) = H(y)**kappa`` (``H`` a GPD cdf), and the gamma distribution.
GPD and GEV fits accept a gamma prior on the shape ``xi`` (generalized
maximum likelihood); all fits report the inverse observed information as the
parameter covariance.
"""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .errors import DataError, NumericalError

log = logging.getLogger(__name__)

XI_EPS = 1e-8
SIM_OBS_PER_YEAR = 365.0


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, rate) prior on the GPD/GEV shape parameter."""

    shape: float = 2.0
    rate: float = 10.0

    def logpdf(self, xi: float) -> float:
        if xi <= 0:
            return -np.inf
        return ((self.shape - 1.0) * math.log(xi) - self.rate * xi
                + self.shape * math.log(self.rate) - special.gammaln(self.shape))

    def dlogpdf(self, xi: float) -> float:
        return (self.shape - 1.0) / xi - self.rate


DEFAULT_PRIOR = GammaPrior()


# ---------------------------------------------------------------------------
# distribution functions

def gpd_logpdf(x, sigma, xi):
    x = np.asarray(x, dtype=float)
    if abs(xi) < XI_EPS:
        return -math.log(sigma) - x / sigma
    a = xi * x / sigma
    with np.errstate(invalid="ignore", divide="ignore"):
        out = -math.log(sigma) - (1.0 + 1.0 / xi) * np.log1p(a)
    return np.where(a > -1.0, out, -np.inf)


def gpd_sf(x, sigma, xi):
    x = np.asarray(x, dtype=float)
    if abs(xi) < XI_EPS:
        return np.exp(-np.maximum(x, 0) / sigma)
    a = np.maximum(xi * np.maximum(x, 0) / sigma, -1.0)
    with np.errstate(divide="ignore"):
        return np.exp(-np.log1p(a) / xi)


def gpd_cdf(x, sigma, xi):
    x = np.asarray(x, dtype=float)
    if abs(xi) < XI_EPS:
        return -np.expm1(-np.maximum(x, 0) / sigma)
    a = np.maximum(xi * np.maximum(x, 0) / sigma, -1.0)
    with np.errstate(divide="ignore"):
        return -np.expm1(-np.log1p(a) / xi)


def gpd_isf(q, sigma, xi):
    """Exceedance level with tail probability ``q``."""
    q = np.asarray(q, dtype=float)
    if abs(xi) < XI_EPS:
        return -sigma * np.log(q)
    return sigma / xi * np.expm1(-xi * np.log(q))


def egpd_cdf(y, kappa, sigma, xi):
    """Extended GPD cdf ``H(y)**kappa``."""
    return gpd_cdf(y, sigma, xi) ** kappa


def egpd_sf(y, kappa, sigma, xi):
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        log_h = np.log1p(-gpd_sf(y, sigma, xi))
    return -np.expm1(kappa * np.maximum(log_h, -745.0))


def egpd_logpdf(y, kappa, sigma, xi):
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        return (math.log(kappa) + gpd_logpdf(y, sigma, xi)
                + (kappa - 1.0) * np.log(gpd_cdf(y, sigma, xi)))


def egpd_pdf(y, kappa, sigma, xi):
    return np.exp(egpd_logpdf(y, kappa, sigma, xi))


def egpd_quantile(p, kappa, sigma, xi):
    """``H^{-1}(p**(1/kappa))``; defined for p in [0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p >= 1)):
        raise ValueError("p must lie in [0, 1)")
    # H^{-1}(c) written with log1p(-c) so that small p keep full precision
    c = p ** (1.0 / kappa)
    with np.errstate(divide="ignore"):
        log_tail = np.log1p(-c)
    if abs(xi) < XI_EPS:
        return -sigma * log_tail
    return sigma / xi * np.expm1(-xi * log_tail)


def egpd_isf(q, kappa, sigma, xi):
    """Level exceeded with probability ``q`` (accurate for tiny ``q``)."""
    q = np.asarray(q, dtype=float)
    tail = -np.expm1(np.log1p(-q) / kappa)
    return gpd_isf(tail, sigma, xi)


def egpd_simulate(n, kappa, sigma, xi, rng):
    """Draw ``n`` values as ``H^{-1}(U**(1/kappa))``."""
    u = rng.random(n)
    return egpd_quantile(u, kappa, sigma, xi)


def gev_cdf(y, mu, sigma, xi):
    w = (np.asarray(y, dtype=float) - mu) / sigma
    if abs(xi) < XI_EPS:
        return np.exp(-np.exp(-w))
    z = np.maximum(1.0 + xi * w, 0.0)
    with np.errstate(divide="ignore"):
        out = np.exp(-z ** (-1.0 / xi))
    return np.where(z > 0, out, 0.0 if xi > 0 else 1.0)


def gev_quantile(p, mu, sigma, xi):
    yp = -np.log(np.asarray(p, dtype=float))
    if abs(xi) < XI_EPS:
        return mu - sigma * np.log(yp)
    return mu + sigma / xi * np.expm1(-xi * np.log(yp))


# ---------------------------------------------------------------------------
# log likelihoods with analytic gradients (natural parameters)

def _gpd_loglik(theta, x):
    sigma, xi = theta
    if sigma <= 0:
        return -np.inf, None
    if abs(xi) < XI_EPS:
        # first order in xi keeps the likelihood continuous across the switch
        z = x / sigma
        g_x = np.sum(0.5 * z * z - z)
        ll = -x.size * math.log(sigma) - z.sum() + xi * g_x
        g_s = (-x.size + z.sum() - xi * np.sum(z * z - z)) / sigma
        return ll, np.array([g_s, g_x])
    t = 1.0 + xi * x / sigma
    if np.any(t <= 0):
        return -np.inf, None
    lt = np.log1p(xi * x / sigma)
    ll = -x.size * math.log(sigma) - (1.0 + 1.0 / xi) * lt.sum()
    g_s = -x.size / sigma + (xi + 1.0) * np.sum(x / t) / sigma ** 2
    g_x = np.sum(lt) / xi ** 2 - (1.0 + 1.0 / xi) * np.sum(x / t) / sigma
    return ll, np.array([g_s, g_x])


def _gev_loglik(theta, y):
    mu, sigma, xi = theta
    if sigma <= 0:
        return -np.inf, None
    w = (y - mu) / sigma
    if abs(xi) < XI_EPS:
        e = np.exp(-w)
        ll = -y.size * math.log(sigma) - np.sum(w) - np.sum(e)
        g_m = np.sum(1.0 - e) / sigma
        g_s = -y.size / sigma + np.sum(w * (1.0 - e)) / sigma
        g_x = np.sum(w * w * (1.0 - e) / 2.0 - w)
        return ll, np.array([g_m, g_s, g_x])
    z = 1.0 + xi * w
    if np.any(z <= 0):
        return -np.inf, None
    lz = np.log1p(xi * w)
    s = np.exp(-lz / xi)
    ll = -y.size * math.log(sigma) - (1.0 + 1.0 / xi) * lz.sum() - s.sum()
    common = ((1.0 + xi) - s) / (sigma * z)
    g_m = np.sum(common)
    g_s = -y.size / sigma + np.sum(w * common)
    g_x = np.sum((1.0 - s) * lz / xi ** 2 - (1.0 + 1.0 / xi) * w / z + s * w / (xi * z))
    return ll, np.array([g_m, g_s, g_x])


def _egpd_loglik(theta, y):
    kappa, sigma, xi = theta
    if kappa <= 0 or sigma <= 0:
        return -np.inf, None
    gll, ggrad = _gpd_loglik((sigma, xi), y)
    if not np.isfinite(gll):
        return -np.inf, None
    if abs(xi) < XI_EPS:
        v = np.exp(-y / sigma)
        dv_s = v * y / sigma ** 2
        dv_x = v * y * y / (2 * sigma ** 2)
    else:
        t = 1.0 + xi * y / sigma
        lt = np.log1p(xi * y / sigma)
        v = np.exp(-lt / xi)
        dv_s = v * y / (sigma ** 2 * t)
        dv_x = v * (lt / xi ** 2 - y / (xi * sigma * t))
    big_h = -np.expm1(np.log(v))
    if np.any(big_h <= 0):
        return -np.inf, None
    log_h = np.log(big_h)
    ll = y.size * math.log(kappa) + gll + (kappa - 1.0) * log_h.sum()
    g_k = y.size / kappa + log_h.sum()
    g_s = ggrad[0] - (kappa - 1.0) * np.sum(dv_s / big_h)
    g_x = ggrad[1] - (kappa - 1.0) * np.sum(dv_x / big_h)
    return ll, np.array([g_k, g_s, g_x])


def _gamma_loglik(theta, y):
    shape, rate = theta
    if shape <= 0 or rate <= 0:
        return -np.inf, None
    n = y.size
    sl, sy = np.log(y).sum(), y.sum()
    ll = n * shape * math.log(rate) - n * special.gammaln(shape) + (shape - 1) * sl - rate * sy
    g = np.array([n * math.log(rate) - n * special.digamma(shape) + sl,
                  n * shape / rate - sy])
    return ll, g


_LOGLIK = {"GPD": _gpd_loglik, "GEV": _gev_loglik, "EGPD1": _egpd_loglik,
           "Gamma": _gamma_loglik}
_NAMES = {"GPD": ("sigma", "xi"), "GEV": ("mu", "sigma", "xi"),
          "EGPD1": ("kappa", "sigma", "xi"), "Gamma": ("shape", "rate")}


def _log_posterior(family, theta, data, prior):
    ll, grad = _LOGLIK[family](theta, data)
    if prior is not None and np.isfinite(ll):
        xi = theta[-1]
        lp = prior.logpdf(xi)
        if not np.isfinite(lp):
            return -np.inf, None
        ll = ll + lp
        grad = grad.copy()
        grad[-1] += prior.dlogpdf(xi)
    return ll, grad


# ---------------------------------------------------------------------------
# fitted models

@dataclass(frozen=True)
class EvtFit:
    family: str
    params: dict
    cov: np.ndarray = field(repr=False)
    loglik: float
    n: int
    threshold_u: float = 0.0
    exceed_rate: float = 1.0
    prior: GammaPrior | None = None
    at_boundary: bool = False
    converged: bool = True
    data: np.ndarray = field(default=None, repr=False)

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.params[k] for k in _NAMES[self.family]])

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))

    def sf(self, y):
        """Per-observation exceedance probability of ``y``."""
        p = self.params
        y = np.asarray(y, dtype=float)
        if self.family == "GPD":
            return self.exceed_rate * gpd_sf(y - self.threshold_u, p["sigma"], p["xi"])
        if self.family == "GEV":
            return 1.0 - gev_cdf(y, p["mu"], p["sigma"], p["xi"])
        if self.family == "EGPD1":
            return self.exceed_rate * egpd_sf(y - self.threshold_u, p["kappa"],
                                              p["sigma"], p["xi"])
        return self.exceed_rate * stats.gamma.sf(y, p["shape"], scale=1.0 / p["rate"])

    def quantile(self, prob):
        """Quantile of the fitted distribution (of exceedances' parent for GPD)."""
        p = self.params
        prob = np.asarray(prob, dtype=float)
        if self.family == "EGPD1":
            return self.threshold_u + egpd_quantile(prob, p["kappa"], p["sigma"], p["xi"])
        if self.family == "Gamma":
            return stats.gamma.ppf(prob, p["shape"], scale=1.0 / p["rate"])
        if self.family == "GEV":
            return gev_quantile(prob, p["mu"], p["sigma"], p["xi"])
        return self.threshold_u + gpd_isf(1.0 - prob, p["sigma"], p["xi"])

    def return_level(self, T, obs_per_year: float = SIM_OBS_PER_YEAR):
        """T-year level. GEV blocks are years; the others count observations."""
        p = self.params
        T = np.asarray(T, dtype=float)
        if self.family == "GEV":
            return gev_quantile(1.0 - 1.0 / T, p["mu"], p["sigma"], p["xi"])
        q = 1.0 / (T * obs_per_year * self.exceed_rate)
        if np.any(q >= 1):
            raise ValueError("return period too short")
        if self.family == "GPD":
            return self.threshold_u + gpd_isf(q, p["sigma"], p["xi"])
        if self.family == "EGPD1":
            return self.threshold_u + egpd_isf(q, p["kappa"], p["sigma"], p["xi"])
        return stats.gamma.isf(q, p["shape"], scale=1.0 / p["rate"])

    def return_period(self, y, obs_per_year: float = SIM_OBS_PER_YEAR):
        s = np.asarray(self.sf(y), dtype=float)
        per_year = 1.0 if self.family == "GEV" else obs_per_year
        with np.errstate(divide="ignore"):
            return 1.0 / (s * per_year)

    def with_params(self, theta) -> "EvtFit":
        return EvtFit(self.family, dict(zip(_NAMES[self.family], map(float, theta))),
                      self.cov, self.loglik, self.n, self.threshold_u,
                      self.exceed_rate, self.prior, self.at_boundary,
                      self.converged, self.data)


def _hessian(family, theta, data, prior):
    """Central differences of the analytic gradient."""
    k = theta.size
    hess = np.empty((k, k))
    for i in range(k):
        step = 1e-5 * max(abs(theta[i]), 1e-2)
        tp, tm = theta.copy(), theta.copy()
        tp[i] += step
        tm[i] -= step
        gp = _log_posterior(family, tp, data, prior)[1]
        gm = _log_posterior(family, tm, data, prior)[1]
        if gp is None or gm is None:
            raise NumericalError("likelihood undefined next to the optimum")
        hess[:, i] = (gp - gm) / (2 * step)
    return 0.5 * (hess + hess.T)


def _maximize(family, data, start, prior, xi_bounds):
    """Quasi-Newton on (log positive params, xi) with analytic gradients."""
    names = _NAMES[family]
    positive = np.array([n in ("sigma", "kappa", "shape", "rate") for n in names])
    has_xi = names[-1] == "xi"

    def to_natural(phi):
        th = phi.copy()
        th[positive] = np.exp(phi[positive])
        return th

    def fun(phi):
        # line searches may probe absurd scales; those just score as infeasible
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            th = to_natural(phi)
            ll, grad = _log_posterior(family, th, data, prior)
        if not np.isfinite(ll) or not np.all(np.isfinite(grad)):
            return 1e300, np.zeros_like(phi)
        g = grad.copy()
        g[positive] *= th[positive]
        return -ll, -g

    phi0 = np.array(start, dtype=float)
    phi0[positive] = np.log(phi0[positive])
    bounds = [(None, None)] * len(names)
    if has_xi:
        bounds[-1] = xi_bounds
    res = optimize.minimize(fun, phi0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": 2000, "ftol": 1e-13, "gtol": 1e-8})
    theta = to_natural(res.x)
    at_boundary = bool(has_xi and (abs(theta[-1] - xi_bounds[0]) < 1e-6
                                   or abs(theta[-1] - xi_bounds[1]) < 1e-6))
    ll, _ = _log_posterior(family, theta, data, prior)
    converged = bool(res.success) and np.isfinite(ll)
    return theta, ll, converged, at_boundary


def _finish(family, theta, data, prior, ll, converged, at_boundary, **extra):
    try:
        info = -_hessian(family, theta, data, prior)
        cov = np.linalg.inv(info)
        if np.any(np.linalg.eigvalsh(0.5 * (cov + cov.T)) < 0):
            cov = np.linalg.pinv(info)
    except (np.linalg.LinAlgError, NumericalError):
        cov = np.full((theta.size, theta.size), np.nan)
    cov = 0.5 * (cov + cov.T)
    if not converged:
        log.warning("%s fit did not converge", family)
    return EvtFit(family, dict(zip(_NAMES[family], map(float, theta))), cov,
                  float(ll), int(data.size), prior=prior, at_boundary=at_boundary,
                  converged=converged, data=data, **extra)


def _xi_bounds(prior):
    return (1e-6, 2.0) if prior is not None else (-0.9, 2.0)


def gpd_fit(exceedances, u: float = 0.0, prior: GammaPrior | None = None,
            exceed_rate: float = 1.0, min_n: int = 30) -> EvtFit:
    """Fit a GPD to ``exceedances`` (values above ``u``, not yet shifted)."""
    y = np.asarray(exceedances, dtype=float)
    x = y - u
    if x.size < min_n:
        raise DataError(f"need at least {min_n} exceedances, got {x.size}")
    if np.any(x <= 0):
        raise DataError("exceedances must lie above the threshold")
    m, v = x.mean(), x.var()
    xi0 = float(np.clip(0.5 * (1 - m * m / v), -0.4, 0.8))
    if prior is not None:
        xi0 = max(xi0, 0.05)
    sigma0 = 0.5 * m * (m * m / v + 1)
    if xi0 < 0:
        sigma0 = max(sigma0, -xi0 * x.max() * 1.01)
    theta, ll, conv, bnd = _maximize("GPD", x, [sigma0, xi0], prior, _xi_bounds(prior))
    return _finish("GPD", theta, x, prior, ll, conv, bnd, threshold_u=float(u),
                   exceed_rate=float(exceed_rate))


def gev_fit(block_maxima, prior: GammaPrior | None = None, min_n: int = 20) -> EvtFit:
    """Fit a GEV to block maxima."""
    y = np.asarray(block_maxima, dtype=float)
    if y.size < min_n:
        raise DataError(f"need at least {min_n} block maxima, got {y.size}")
    if np.ptp(y) <= 0:
        raise DataError("degenerate sample: all block maxima are equal")
    s0 = math.sqrt(6 * y.var()) / math.pi
    mu0 = y.mean() - 0.5772 * s0
    xi0 = 0.1
    theta, ll, conv, bnd = _maximize("GEV", y, [mu0, s0, xi0], prior, _xi_bounds(prior))
    return _finish("GEV", theta, y, prior, ll, conv, bnd)


def egpd1_fit(amounts, exceed_rate: float = 1.0, shift: float = 0.0,
              min_n: int = 100) -> EvtFit:
    """Maximum likelihood fit of the extended GPD ``H**kappa``.

    With ``shift > 0`` the model is fitted to ``amounts - shift`` (amounts
    truncated below at ``shift``) and predictions are shifted back.
    """
    y = np.asarray(amounts, dtype=float) - shift
    if y.size < min_n:
        raise DataError(f"need at least {min_n} amounts, got {y.size}")
    if np.any(y <= 0):
        raise DataError("amounts must be positive")
    best = None
    for k0, x0 in ((1.0, 0.1), (0.7, 0.2), (1.5, 0.05)):
        gp = gpd_fit(y, 0.0, min_n=1)
        start = [k0, gp.params["sigma"], x0]
        theta, ll, conv, bnd = _maximize("EGPD1", y, start, None, (-0.5, 2.0))
        if best is None or ll > best[1]:
            best = (theta, ll, conv, bnd)
    theta, ll, conv, bnd = best
    return _finish("EGPD1", theta, y, None, ll, conv, bnd, threshold_u=float(shift),
                   exceed_rate=float(exceed_rate))


def gamma_fit(amounts, exceed_rate: float = 1.0, min_n: int = 100) -> EvtFit:
    """Gamma maximum likelihood via the profile score in the shape."""
    y = np.asarray(amounts, dtype=float)
    if y.size < min_n:
        raise DataError(f"need at least {min_n} amounts, got {y.size}")
    if np.any(y <= 0):
        raise DataError("amounts must be positive")
    s = math.log(y.mean()) - np.log(y).mean()
    if s <= 0:
        raise DataError("degenerate sample")
    k0 = (3 - s + math.sqrt((s - 3) ** 2 + 24 * s)) / (12 * s)
    lo, hi = k0 / 4, k0 * 4
    fn = lambda k: math.log(k) - special.digamma(k) - s  # noqa: E731
    while fn(lo) < 0:
        lo /= 2
    while fn(hi) > 0:
        hi *= 2
    shape = optimize.brentq(fn, lo, hi, xtol=1e-14, rtol=1e-15)
    rate = shape / y.mean()
    theta = np.array([shape, rate])
    ll, _ = _gamma_loglik(theta, y)
    n = y.size
    info = np.array([[n * special.polygamma(1, shape), -n / rate],
                     [-n / rate, n * shape / rate ** 2]])
    return EvtFit("Gamma", {"shape": float(shape), "rate": float(rate)},
                  np.linalg.inv(info), float(ll), n, exceed_rate=float(exceed_rate),
                  data=y)


def block_maxima(values, block: int = 365) -> np.ndarray:
    """Maxima of consecutive complete blocks of ``block`` observations."""
    v = np.asarray(values, dtype=float)
    nb = v.size // block
    return v[: nb * block].reshape(nb, block).max(axis=1)


# ---------------------------------------------------------------------------
# return-level intervals

def _rl_gradient(fit: EvtFit, T: float, obs_per_year: float) -> np.ndarray:
    p = fit.params
    xi = p["xi"]
    if fit.family == "GPD":
        m = T * obs_per_year * fit.exceed_rate
        lm = math.log(m)
        if abs(xi) < XI_EPS:
            return np.array([lm, p["sigma"] * lm * lm / 2])
        a = math.expm1(xi * lm)
        return np.array([a / xi, -p["sigma"] * a / xi ** 2
                         + p["sigma"] / xi * math.exp(xi * lm) * lm])
    if fit.family == "GEV":
        lyp = math.log(-math.log1p(-1.0 / T))
        if abs(xi) < XI_EPS:
            return np.array([1.0, -lyp, p["sigma"] * lyp * lyp / 2])
        a = math.expm1(-xi * lyp)
        return np.array([1.0, a / xi, -p["sigma"] * a / xi ** 2
                         - p["sigma"] / xi * math.exp(-xi * lyp) * lyp])
    raise ValueError("delta intervals need a GPD or GEV fit")


def rl_interval_delta(fit: EvtFit, T: float, level: float = 0.90,
                      obs_per_year: float = SIM_OBS_PER_YEAR) -> tuple[float, float]:
    """Normal-approximation interval from the delta method."""
    if fit.family not in ("GPD", "GEV"):
        raise ValueError("delta intervals need a GPD or GEV fit")
    r = float(fit.return_level(T, obs_per_year))
    grad = _rl_gradient(fit, T, obs_per_year)
    se = math.sqrt(max(float(grad @ fit.cov @ grad), 0.0))
    z = stats.norm.ppf(0.5 + level / 2)
    return r - z * se, r + z * se


def _profile_gpd(fit, r, m):
    u = fit.threshold_u
    x = fit.data
    lo, hi = _xi_bounds(fit.prior)

    def negll(xi):
        if abs(xi) < XI_EPS:
            sigma = (r - u) / math.log(m)
        else:
            sigma = (r - u) * xi / math.expm1(xi * math.log(m))
        ll, _ = _log_posterior("GPD", np.array([sigma, xi]), x, fit.prior)
        return -ll if np.isfinite(ll) else 1e300

    grid = np.linspace(lo, hi, 41)
    vals = [negll(v) for v in grid]
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(negll, bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-10})
    return -min(res.fun, vals[i])


def _profile_gev(fit, r, T):
    y = fit.data
    lyp = math.log(-math.log1p(-1.0 / T))
    lo, hi = _xi_bounds(fit.prior)

    def negll(phi):
        sigma, xi = math.exp(phi[0]), phi[1]
        if not lo <= xi <= hi:
            return 1e300
        if abs(xi) < XI_EPS:
            mu = r + sigma * lyp
        else:
            mu = r - sigma / xi * math.expm1(-xi * lyp)
        ll, _ = _log_posterior("GEV", np.array([mu, sigma, xi]), y, fit.prior)
        return -ll if np.isfinite(ll) else 1e300

    p = fit.params
    res = optimize.minimize(negll, [math.log(p["sigma"]), p["xi"]], method="Nelder-Mead",
                            options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000})
    return -res.fun


def rl_interval_profile(fit: EvtFit, T: float, level: float = 0.90,
                        obs_per_year: float = SIM_OBS_PER_YEAR) -> tuple[float, float]:
    """Profile-likelihood interval for the T-year return level."""
    if fit.family not in ("GPD", "GEV"):
        raise ValueError("profile intervals need a GPD or GEV fit")
    r_hat = float(fit.return_level(T, obs_per_year))
    ll_hat = fit.loglik
    drop = 0.5 * stats.chi2.ppf(level, 1)
    if drop < 1e-10:
        return r_hat, r_hat
    if fit.family == "GPD":
        m = T * obs_per_year * fit.exceed_rate
        prof = lambda r: _profile_gpd(fit, r, m)  # noqa: E731
        floor = fit.threshold_u
    else:
        prof = lambda r: _profile_gev(fit, r, T)  # noqa: E731
        floor = -np.inf
    target = lambda r: prof(r) - (ll_hat - drop)  # noqa: E731
    se = math.sqrt(max(float(_rl_gradient(fit, T, obs_per_year) @ fit.cov
                             @ _rl_gradient(fit, T, obs_per_year)), 1e-12))
    step = max(se, 1e-3 * abs(r_hat))
    hi = r_hat + step
    for _ in range(60):
        if target(hi) < 0:
            break
        step *= 1.6
        hi = r_hat + step
    else:
        raise NumericalError("upper profile bracket not found")
    r_hi = optimize.brentq(target, r_hat, hi, xtol=1e-8 * abs(r_hat))
    step = max(se, 1e-3 * abs(r_hat))
    lo = r_hat - step
    for _ in range(60):
        if lo <= floor:
            lo = floor + 1e-9 * max(abs(r_hat), 1.0)
        if target(lo) < 0:
            break
        if lo <= floor + 1e-6 * max(abs(r_hat), 1.0):
            raise NumericalError("lower profile bracket not found")
        step *= 1.6
        lo = r_hat - step
    else:
        raise NumericalError("lower profile bracket not found")
    r_lo = optimize.brentq(target, lo, r_hat, xtol=1e-8 * abs(r_hat))
    return r_lo, r_hi



def return_period_delta(fit: EvtFit, y: float, level: float = 0.90,
                        obs_per_year: float = SIM_OBS_PER_YEAR) -> tuple[float, float, float]:
    """Return period of ``y`` with a delta-method interval on the log scale.

    The gradient of ``log T(y)`` in the parameters is taken by central
    differences. Returns ``(estimate, lo, hi)``.
    """
    theta = fit.theta
    est = float(fit.return_period(y, obs_per_year))
    if not np.isfinite(est):
        return est, est, est
    grad = np.empty(theta.size)
    for i in range(theta.size):
        step = 1e-6 * max(abs(theta[i]), 1e-3)
        tp, tm = theta.copy(), theta.copy()
        tp[i] += step
        tm[i] -= step
        up = float(fit.with_params(tp).return_period(y, obs_per_year))
        dn = float(fit.with_params(tm).return_period(y, obs_per_year))
        grad[i] = (math.log(up) - math.log(dn)) / (2 * step)
    se = math.sqrt(max(float(grad @ fit.cov @ grad), 0.0))
    z = stats.norm.ppf(0.5 + level / 2)
    return est, est * math.exp(-z * se), est * math.exp(z * se)

# ---------------------------------------------------------------------------
# threshold diagnostics

@dataclass(frozen=True)
class DiagnosticSeries:
    name: str
    u: np.ndarray
    n_exceed: np.ndarray
    estimate: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    dropped: tuple = ()

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"u,n_exceed,{self.name},lo,hi\n")
        for row in zip(self.u, self.n_exceed, self.estimate, self.lo, self.hi):
            buf.write(f"{row[0]:.17g},{int(row[1])},{row[2]:.17g},{row[3]:.17g},"
                      f"{row[4]:.17g}\n")
        return buf.getvalue()


def mean_residual_life(amounts, u_grid, level: float = 0.95,
                       min_exceed: int = 30) -> DiagnosticSeries:
    """Mean excess over each threshold with a normal confidence band."""
    y = np.asarray(amounts, dtype=float)
    z = stats.norm.ppf(0.5 + level / 2)
    rows, dropped = [], []
    for u in np.asarray(u_grid, dtype=float):
        ex = y[y > u] - u
        if ex.size < min_exceed:
            dropped.append(float(u))
            continue
        me = ex.mean()
        se = ex.std(ddof=1) / math.sqrt(ex.size)
        rows.append((u, ex.size, me, me - z * se, me + z * se))
    if dropped:
        log.info("mean residual life: %d thresholds dropped (< %d exceedances)",
                 len(dropped), min_exceed)
    arr = np.array(rows, dtype=float).reshape(-1, 5)
    return DiagnosticSeries("mean_excess", *arr.T, dropped=tuple(dropped))


def shape_stability(amounts, u_grid, level: float = 0.95,
                    min_exceed: int = 30) -> DiagnosticSeries:
    """GPD shape refitted above each threshold, with delta-method band."""
    y = np.asarray(amounts, dtype=float)
    z = stats.norm.ppf(0.5 + level / 2)
    rows, dropped = [], []
    for u in np.asarray(u_grid, dtype=float):
        ex = y[y > u]
        if ex.size < min_exceed:
            dropped.append(float(u))
            continue
        try:
            f = gpd_fit(ex, u, min_n=min_exceed)
        except (DataError, NumericalError):
            dropped.append(float(u))
            continue
        xi, se = f.params["xi"], f.se[1]
        rows.append((u, ex.size, xi, xi - z * se, xi + z * se))
    arr = np.array(rows, dtype=float).reshape(-1, 5)
    return DiagnosticSeries("xi", *arr.T, dropped=tuple(dropped))
