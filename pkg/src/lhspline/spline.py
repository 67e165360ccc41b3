"""Natural cubic splines in value/second-derivative form.

A spline is stored by its values at the knots and its second derivatives
there (zero at both ends). Outside the boundary knots it continues as the
tangent line, so a log-density built from it has exponential tails in the
log variable and power-law tails on the original scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solveh_banded

from . import kernels


def _spacing(knots: np.ndarray) -> np.ndarray:
    knots = np.asarray(knots, dtype=float)
    if knots.ndim != 1 or knots.size < 3:
        raise ValueError("need at least 3 knots")
    if not np.all(np.isfinite(knots)):
        raise ValueError("knots must be finite")
    h = np.diff(knots)
    if np.any(h <= 0):
        raise ValueError("knots must be strictly increasing (duplicate or "
                         "unsorted knots)")
    return h


@dataclass(frozen=True)
class SplineModel:
    knots: np.ndarray
    values: np.ndarray
    second_derivs: np.ndarray
    boundary_slopes: tuple[float, float]

    @classmethod
    def from_values(cls, knots, values) -> "SplineModel":
        """Natural interpolating spline through ``(knots, values)``."""
        knots = np.array(knots, dtype=float)
        values = np.array(values, dtype=float)
        if values.shape != knots.shape:
            raise ValueError("knots and values differ in length")
        h = _spacing(knots)
        gam = np.zeros_like(values)
        gam[1:-1] = kernels.interior_second_derivs(values, h)
        left = (values[1] - values[0]) / h[0] - h[0] * gam[1] / 6.0
        right = (values[-1] - values[-2]) / h[-1] + h[-1] * gam[-2] / 6.0
        knots.flags.writeable = False
        values.flags.writeable = False
        gam.flags.writeable = False
        return cls(knots, values, gam, (float(left), float(right)))

    @property
    def n_knots(self) -> int:
        return self.knots.size

    def __call__(self, x):
        return natural_spline_eval(self, x)

    def derivative(self, x, order: int = 1):
        """First or second derivative, with the linear continuation outside."""
        x = np.asarray(x, dtype=float)
        t, g, gam = self.knots, self.values, self.second_derivs
        i = np.clip(np.searchsorted(t, x, side="right") - 1, 0, t.size - 2)
        h = t[i + 1] - t[i]
        a = x - t[i]
        b = t[i + 1] - x
        if order == 1:
            d = ((g[i + 1] - g[i]) / h
                 - (gam[i] * (3 * b * b - h * h) - gam[i + 1] * (3 * a * a - h * h))
                 / (6 * h))
            d = np.where(x < t[0], self.boundary_slopes[0], d)
            d = np.where(x > t[-1], self.boundary_slopes[1], d)
        elif order == 2:
            d = (gam[i] * b + gam[i + 1] * a) / h
            d = np.where((x < t[0]) | (x > t[-1]), 0.0, d)
        else:
            raise ValueError("order must be 1 or 2")
        return d


def natural_spline_eval(model: SplineModel, x):
    """Evaluate the spline at ``x`` (scalar or array)."""
    x_arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x_arr)):
        raise ValueError("evaluation point must be finite")
    t, g, gam = model.knots, model.values, model.second_derivs
    i = np.clip(np.searchsorted(t, x_arr, side="right") - 1, 0, t.size - 2)
    h = t[i + 1] - t[i]
    a = x_arr - t[i]
    b = t[i + 1] - x_arr
    out = (a * g[i + 1] + b * g[i]) / h - a * b / 6.0 * (
        (1.0 + a / h) * gam[i + 1] + (1.0 + b / h) * gam[i])
    left, right = model.boundary_slopes
    out = np.where(x_arr < t[0], g[0] + left * (x_arr - t[0]), out)
    out = np.where(x_arr > t[-1], g[-1] + right * (x_arr - t[-1]), out)
    if out.ndim == 0:
        return float(out)
    return out


def basis_matrix(knots, x) -> np.ndarray:
    """Matrix ``B`` with ``B @ values == natural_spline_eval(spline, x)``.

    Evaluation is linear in the knot values, so column ``j`` is the spline
    through the ``j``-th unit vector.
    """
    knots = np.asarray(knots, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = knots.size
    cols = np.empty((x.size, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cols[:, j] = natural_spline_eval(SplineModel.from_values(knots, e), x)
    return cols


@dataclass(frozen=True)
class PenaltyMatrix:
    """Roughness matrix with ``g @ matrix @ g == integral of g''**2``."""

    knots: np.ndarray
    matrix: np.ndarray = field(repr=False)

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.knots)

    def quad(self, values) -> float:
        """O(N) evaluation of the roughness of the spline through ``values``."""
        return kernels.penalty_value(np.asarray(values, dtype=float),
                                     self.spacing)


def second_difference_matrix(knots) -> np.ndarray:
    """The N x (N-2) map Q, so that Q.T @ g gives scaled second differences."""
    h = _spacing(knots)
    n = h.size + 1
    q = np.zeros((n, n - 2))
    k = np.arange(n - 2)
    q[k, k] = 1.0 / h[:-1]
    q[k + 1, k] = -1.0 / h[:-1] - 1.0 / h[1:]
    q[k + 2, k] = 1.0 / h[1:]
    return q


def penalty_matrix(knots) -> PenaltyMatrix:
    """Build Q R^{-1} Q^T from the banded second-difference and Gram maps."""
    knots = np.array(knots, dtype=float)
    h = _spacing(knots)
    q = second_difference_matrix(knots)
    m = h.size - 1
    ab = np.zeros((2, m))
    ab[1] = (h[:-1] + h[1:]) / 3.0
    ab[0, 1:] = h[1:-1] / 6.0
    rinv_qt = solveh_banded(ab, q.T)
    mat = q @ rinv_qt
    mat = 0.5 * (mat + mat.T)
    knots.flags.writeable = False
    mat.flags.writeable = False
    return PenaltyMatrix(knots, mat)
