"""Equal-width histograms of log-transformed positive data.

Bins are half open, ``[b_j, b_{j+1})``, except the last which is closed on
both sides. The bin midpoints double as spline knots.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

DEFAULT_N_BINS = 150
DEFAULT_EXTENSION = 1.5


@dataclass(frozen=True)
class LogHistogram:
    breaks: np.ndarray
    counts: np.ndarray
    knots: np.ndarray
    n_total: int
    bin_width: float
    extension_factor: float
    support_low: float = 0.0
    data_min: float = np.nan
    data_max: float = np.nan

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def censored(self) -> bool:
        return self.support_low > 0

    def to_csv(self) -> str:
        """Rows of (bin, lower break, upper break, knot, count)."""
        buf = io.StringIO()
        buf.write("bin,break_lo,break_hi,knot,count\n")
        for j in range(self.n_bins):
            buf.write(f"{j + 1},{self.breaks[j]:.17g},{self.breaks[j + 1]:.17g},"
                      f"{self.knots[j]:.17g},{int(self.counts[j])}\n")
        return buf.getvalue()


def bin_counts(x: np.ndarray, breaks: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(breaks, x, side="right") - 1
    idx[x == breaks[-1]] = breaks.size - 2
    if np.any((idx < 0) | (idx > breaks.size - 2)):
        raise ValueError("data outside histogram range")
    return np.bincount(idx, minlength=breaks.size - 1)


def build_histogram(amounts, n_bins: int = DEFAULT_N_BINS,
                    extension_factor: float = DEFAULT_EXTENSION,
                    censor_bound: float = 0.0) -> LogHistogram:
    """Histogram of ``log(amounts)`` over an optionally widened range.

    Without censoring the data range is stretched about its midpoint to
    ``extension_factor`` times its length. With ``censor_bound > 0`` the
    first break is pinned at ``log(censor_bound)`` and only the right end
    moves, by the same amount one side would move in the symmetric case.
    """
    y = np.asarray(amounts, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("amounts must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        raise ValueError("all amounts must be finite and positive")
    if n_bins < 20:
        raise ValueError("n_bins must be at least 20")
    if not extension_factor >= 1:
        raise ValueError("extension_factor must be >= 1")
    if np.unique(y).size < 2:
        raise ValueError("need at least 2 distinct amounts")
    x = np.log(y)
    lo, hi = float(x.min()), float(x.max())
    if censor_bound > 0:
        b_lo = float(np.log(censor_bound))
        if lo <= b_lo:
            raise ValueError("amounts must exceed the censor bound")
        length = hi - b_lo
        b_hi = hi + 0.5 * (extension_factor - 1.0) * length
        if extension_factor == 1:
            b_hi = hi
    elif extension_factor == 1:
        b_lo, b_hi = lo, hi
    else:
        mid = 0.5 * (lo + hi)
        half = 0.5 * extension_factor * (hi - lo)
        b_lo, b_hi = mid - half, mid + half
    breaks = np.linspace(b_lo, b_hi, n_bins + 1)
    counts = bin_counts(x, breaks)
    knots = (breaks[:-1] + breaks[1:]) / 2
    for arr in (breaks, counts, knots):
        arr.flags.writeable = False
    return LogHistogram(breaks=breaks, counts=counts, knots=knots,
                        n_total=int(y.size), bin_width=float(breaks[1] - breaks[0]),
                        extension_factor=float(extension_factor),
                        support_low=float(max(censor_bound, 0.0)),
                        data_min=lo, data_max=hi)


def poisson_cell_intensity_check(hist: LogHistogram, g, points_per_bin: int = 64) -> float:
    """Worst relative error of the midpoint rule for the bin integrals of exp(g).

    Diagnostic for how fine the binning is relative to the curvature of g.
    """
    nodes, weights = np.polynomial.legendre.leggauss(points_per_bin)
    b = np.asarray(hist.breaks)
    half = 0.5 * np.diff(b)
    centre = 0.5 * (b[:-1] + b[1:])
    xs = centre[:, None] + half[:, None] * nodes[None, :]
    vals = np.exp(np.asarray(g(xs.ravel()), dtype=float)).reshape(xs.shape)
    exact = (vals * weights[None, :]).sum(axis=1) * half
    mid = np.exp(np.asarray(g(centre), dtype=float)) * 2 * half
    return float(np.max(np.abs(exact - mid) / exact))
