"""Normalized densities from spline log intensities.

On the log scale ``x = log(y)`` the density is ``exp(g(x))``; on the original
scale ``f(y) = exp(g(log y)) / y``. Inside the histogram range the mass is
integrated by composite Simpson; beyond it ``g`` is linear and the tails are
integrated in closed form, which gives ``f(y) = C y**-(alpha + 1)`` on the
right.
"""
from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .binning import LogHistogram
from .errors import NumericalError
from .spline import SplineModel, natural_spline_eval

SIMPSON_PER_BIN = 16
SIM_OBS_PER_YEAR = 365.0
STATION_OBS_PER_YEAR = 365.25

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class DensityFit:
    spline: SplineModel = field(repr=False)
    log_norm_const: float
    tail_index_alpha: float
    left_slope: float
    support_low: float
    wet_fraction: float
    lo: float
    hi: float
    nodes: np.ndarray = field(repr=False)
    cum_left: np.ndarray = field(repr=False)
    cum_right: np.ndarray = field(repr=False)

    @property
    def censored(self) -> bool:
        return self.support_low > 0

    @property
    def implied_xi(self) -> float:
        """GPD shape matching the power-law tail, 1 / alpha."""
        return 1.0 / self.tail_index_alpha

    def logpdf_log(self, x):
        """Log density of log(Y) at ``x`` (the normalized ``g``)."""
        return natural_spline_eval(self.spline, x)

    def pdf(self, y):
        y_arr = np.asarray(y, dtype=float)
        if np.any(y_arr <= self.support_low):
            raise ValueError("y must exceed the support lower limit")
        out = np.exp(natural_spline_eval(self.spline, np.log(y_arr))) / y_arr
        return float(out) if out.ndim == 0 else out

    def _partial(self, k, x):
        # integral of exp(g) from nodes[k] to x, by 8-point Gauss-Legendre
        a = self.nodes[k]
        half = 0.5 * (x - a)
        mid = 0.5 * (x + a)
        pts = mid[..., None] + half[..., None] * _GL_NODES
        vals = np.exp(natural_spline_eval(self.spline, pts))
        return half * (vals @ _GL_WEIGHTS)

    def _cdf_sf(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        cdf = np.empty_like(x)
        sf = np.empty_like(x)
        left = x <= self.lo
        right = x >= self.hi
        mid = ~(left | right)
        if np.any(left):
            if self.censored:
                cdf[left] = 0.0
            else:
                cdf[left] = np.exp(natural_spline_eval(self.spline, x[left])) / self.left_slope
            sf[left] = 1.0 - cdf[left]
        if np.any(right):
            sf[right] = (np.exp(natural_spline_eval(self.spline, x[right]))
                         / self.tail_index_alpha)
            cdf[right] = 1.0 - sf[right]
        if np.any(mid):
            xm = x[mid]
            k = np.clip(np.searchsorted(self.nodes, xm, side="right") - 1, 0,
                        self.nodes.size - 2)
            part = self._partial(k, xm)
            cdf[mid] = self.cum_left[k] + part
            sf[mid] = self.cum_right[k] - part
        return cdf, sf

    def cdf(self, y):
        y_arr = np.asarray(y, dtype=float)
        x = np.log(np.maximum(y_arr, 1e-300))
        c, _ = self._cdf_sf(x)
        c = np.where(y_arr <= self.support_low, 0.0, c)
        return float(c[0]) if y_arr.ndim == 0 else c.reshape(y_arr.shape)

    def sf(self, y):
        """Survival function P(Y > y), computed without cancellation."""
        y_arr = np.asarray(y, dtype=float)
        x = np.log(np.maximum(y_arr, 1e-300))
        _, s = self._cdf_sf(x)
        s = np.where(y_arr <= self.support_low, 1.0, s)
        return float(s[0]) if y_arr.ndim == 0 else s.reshape(y_arr.shape)

    def _solve_log(self, p, upper: bool):
        """Log-scale points where cdf (or sf, if ``upper``) equals ``p``.

        Tails are inverted in closed form. Inside the range the segment is
        located from the cumulative masses, then a safeguarded Newton
        iteration (bisection whenever a step leaves the bracket) solves for
        all points at once.
        """
        p = np.asarray(p, dtype=float)
        out = np.empty_like(p)
        g_lo = float(natural_spline_eval(self.spline, self.lo))
        g_hi = float(natural_spline_eval(self.spline, self.hi))
        if upper:
            tail = p <= self.cum_right[-1]
            a = self.tail_index_alpha
            out[tail] = self.hi + (g_hi - np.log(p[tail] * a)) / a
            k = np.searchsorted(-self.cum_right, -p, side="right") - 1
            k = np.clip(k, 0, self.nodes.size - 2)
            target = self.cum_right[k] - p
        else:
            tail = np.zeros(p.shape, dtype=bool)
            if not self.censored:
                tail = p <= self.cum_left[0]
                sl = self.left_slope
                out[tail] = self.lo + (np.log(p[tail] * sl) - g_lo) / sl
            k = np.searchsorted(self.cum_left, p, side="right") - 1
            k = np.clip(k, 0, self.nodes.size - 2)
            target = p - self.cum_left[k]
        inner = ~tail
        if np.any(inner):
            out[inner] = self._invert_partial(k[inner], target[inner])
        return out

    def _invert_partial(self, k, target):
        # solve _partial(k, x) = target for x in [nodes[k], nodes[k+1]]
        a = self.nodes[k].astype(float)
        b = self.nodes[k + 1].astype(float)
        seg = self._partial(k, b)
        target = np.clip(target, 0.0, seg)
        lo, hi = a.copy(), b.copy()
        x = a + (b - a) * np.where(seg > 0, target / np.where(seg > 0, seg, 1.0), 0.5)
        for _ in range(100):
            f = self._partial(k, x) - target
            lo = np.where(f < 0, x, lo)
            hi = np.where(f > 0, x, hi)
            d = np.exp(natural_spline_eval(self.spline, x))
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(d > 0, f / d, np.inf)
            x_new = x - step
            bad = ~((x_new > lo) & (x_new < hi)) | ~np.isfinite(x_new)
            x_new = np.where(bad, 0.5 * (lo + hi), x_new)
            done = (np.abs(x_new - x) <= 1e-14 * (1.0 + np.abs(x))) | (f == 0)
            x = np.where(f == 0, x, x_new)
            if np.all(done):
                break
        return x

    def quantile(self, p):
        """Inverse cdf on the original scale."""
        p_arr = np.atleast_1d(np.asarray(p, dtype=float))
        if np.any((p_arr <= 0) | (p_arr >= 1)):
            raise ValueError("p must lie in (0, 1)")
        hi_side = p_arr > 0.5
        logs = np.empty_like(p_arr)
        logs[hi_side] = self._solve_log(1.0 - p_arr[hi_side], True)
        logs[~hi_side] = self._solve_log(p_arr[~hi_side], False)
        with np.errstate(over="ignore"):
            out = np.exp(logs)
        return float(out[0]) if np.ndim(p) == 0 else out

    def isf(self, q):
        """Value exceeded with probability ``q``."""
        q_arr = np.atleast_1d(np.asarray(q, dtype=float))
        if np.any((q_arr <= 0) | (q_arr >= 1)):
            raise ValueError("exceedance probability must lie in (0, 1)")
        lo_side = q_arr < 0.5
        logs = np.empty_like(q_arr)
        logs[lo_side] = self._solve_log(q_arr[lo_side], True)
        logs[~lo_side] = self._solve_log(1.0 - q_arr[~lo_side], False)
        with np.errstate(over="ignore"):
            out = np.exp(logs)
        return float(out[0]) if np.ndim(q) == 0 else out

    def return_level(self, T, obs_per_year: float = SIM_OBS_PER_YEAR):
        """Level exceeded on average once every ``T`` years.

        Exceedances can only happen on days in the analysed subsample, so the
        per-observation probability is divided by ``wet_fraction``.
        """
        T_arr = np.atleast_1d(np.asarray(T, dtype=float))
        if np.any(T_arr <= 0) or obs_per_year <= 0:
            raise ValueError("T and obs_per_year must be positive")
        q = 1.0 / (T_arr * obs_per_year * self.wet_fraction)
        if np.any(q >= 1):
            raise ValueError("return period too short: exceedance probability >= 1")
        out = self.isf(q)
        return float(out[0]) if np.ndim(T) == 0 else out

    def return_period(self, y, obs_per_year: float = SIM_OBS_PER_YEAR):
        """Mean years between exceedances of ``y``; ``inf`` if P(Y > y) == 0."""
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        if np.any(y_arr <= self.support_low):
            raise ValueError("y must exceed the support lower limit")
        s = np.atleast_1d(self.sf(y_arr))
        with np.errstate(divide="ignore"):
            T = 1.0 / (s * obs_per_year * self.wet_fraction)
        if np.any(~np.isfinite(T)):
            warnings.warn("exceedance probability underflowed; return period is inf",
                          RuntimeWarning, stacklevel=2)
        return float(T[0]) if np.ndim(y) == 0 else T

    def grid(self, n: int = 400) -> str:
        """CSV rows of the density on both scales over the histogram range."""
        x = np.linspace(self.lo, self.hi, n)
        g = natural_spline_eval(self.spline, x)
        y = np.exp(x)
        keep = y > self.support_low
        x, g, y = x[keep], g[keep], y[keep]
        f = np.exp(g) / y
        c = self.cdf(y)
        buf = io.StringIO()
        buf.write("log_y,log_density_log_scale,y,density,cdf\n")
        for row in zip(x, g, y, f, c):
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return buf.getvalue()


def normalize(spline: SplineModel, hist: LogHistogram,
              wet_fraction: float = 1.0,
              per_bin: int = SIMPSON_PER_BIN) -> DensityFit:
    """Rescale a log intensity so ``exp(g)`` integrates to one over the line."""
    if per_bin < 8 or per_bin % 2:
        raise ValueError("per_bin must be an even number >= 8")
    left_slope, right_slope = spline.boundary_slopes
    censored = hist.support_low > 0
    if not right_slope < 0:
        raise NumericalError(
            f"right boundary slope {right_slope:.4g} is not negative: upper tail "
            "not integrable (too little data or lambda too small)")
    if not censored and not left_slope > 0:
        raise NumericalError(
            f"left boundary slope {left_slope:.4g} is not positive: lower tail "
            "not integrable (too little data or lambda too small)")
    lo, hi = float(hist.breaks[0]), float(hist.breaks[-1])
    fine = np.linspace(lo, hi, hist.n_bins * per_bin + 1)
    gv = natural_spline_eval(spline, fine)
    shift = float(np.max(gv))
    ev = np.exp(gv - shift)
    step = fine[1] - fine[0]
    seg = step / 3.0 * (ev[:-2:2] + 4.0 * ev[1:-1:2] + ev[2::2])
    left_tail = 0.0 if censored else ev[0] / left_slope
    right_tail = ev[-1] / -right_slope
    mass = left_tail + seg.sum() + right_tail
    log_mass = shift + math.log(mass)
    normed = SplineModel.from_values(spline.knots, spline.values - log_mass)
    seg = seg / mass
    cum_left = np.concatenate(([left_tail / mass], left_tail / mass + np.cumsum(seg)))
    rev = np.cumsum(seg[::-1])[::-1]
    cum_right = np.concatenate((right_tail / mass + rev, [right_tail / mass]))
    nodes = fine[::2].copy()
    for arr in (nodes, cum_left, cum_right):
        arr.flags.writeable = False
    return DensityFit(spline=normed, log_norm_const=log_mass,
                      tail_index_alpha=float(-right_slope),
                      left_slope=float(left_slope),
                      support_low=float(hist.support_low),
                      wet_fraction=float(wet_fraction), lo=lo, hi=hi,
                      nodes=nodes, cum_left=cum_left, cum_right=cum_right)
