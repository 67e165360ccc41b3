"""Pure numpy/scipy implementation of the penalized Poisson kernels.

Mirrors ``_kernels.pyx`` call for call. Used when the compiled extension is
not importable or when ``LHSPLINE_PURE_PYTHON=1`` is set.
"""
import numpy as np
from scipy.linalg import solveh_banded

STATUS_CONVERGED = 0
STATUS_MAX_ITER = 1
STATUS_STALLED = 2
STATUS_NONFINITE = 3

_MAX_HALVINGS = 40


def second_diff(g, h):
    """Return Q^T g, the (N-2)-vector of scaled second differences."""
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    return (g[:-2] / h[:-1] - g[1:-1] * (1.0 / h[:-1] + 1.0 / h[1:])
            + g[2:] / h[1:])


def _gram_banded(h):
    m = h.size - 1
    ab = np.zeros((2, m))
    ab[1] = (h[:-1] + h[1:]) / 3.0
    ab[0, 1:] = h[1:-1] / 6.0
    return ab


def interior_second_derivs(g, h):
    """Solve R gamma = Q^T g for the interior second derivatives."""
    h = np.asarray(h, dtype=float)
    rhs = second_diff(g, h)
    if rhs.size == 1:
        return rhs / ((h[0] + h[1]) / 3.0)
    return solveh_banded(_gram_banded(h), rhs, check_finite=False)


def penalty_value(g, h):
    """Return g^T K g = integral of the squared second derivative."""
    qg = second_diff(g, h)
    gamma = interior_second_derivs(g, h)
    return float(qg @ gamma)


def q_times(gamma, h):
    """Return Q gamma, an N-vector, for gamma with N-2 entries."""
    n = h.size + 1
    out = np.zeros(n)
    out[:-2] += gamma / h[:-1]
    out[1:-1] -= gamma * (1.0 / h[:-1] + 1.0 / h[1:])
    out[2:] += gamma / h[1:]
    return out


def reinsch_solve(u, d, h, c):
    """Solve (W + c K) g = W u with W = diag(1/d) by the Reinsch reduction.

    ``d`` holds the inverse weights. The reduced system
    (R + c Q^T D Q) gamma = Q^T u is symmetric pentadiagonal.
    """
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    h = np.asarray(h, dtype=float)
    m = u.size - 2
    a = 1.0 / h[:-1]
    b = -(1.0 / h[:-1] + 1.0 / h[1:])
    e = 1.0 / h[1:]
    ab = np.zeros((3, m))
    ab[2] = (h[:-1] + h[1:]) / 3.0 + c * (d[:-2] * a * a + d[1:-1] * b * b
                                           + d[2:] * e * e)
    if m > 1:
        ab[1, 1:] = h[1:-1] / 6.0 + c * (d[1:-2] * b[:-1] * a[1:]
                                          + d[2:-1] * e[:-1] * b[1:])
    if m > 2:
        ab[0, 2:] = c * d[2:-2] * e[:-2] * a[2:]
    rhs = a * u[:-2] + b * u[1:-1] + e * u[2:]
    gamma = solveh_banded(ab, rhs, check_finite=False)
    return u - c * d * q_times(gamma, h)


def objective(z, h, lam, g):
    g = np.asarray(g, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        nll = float(np.sum(np.exp(g) - z * g))
    return nll + lam * penalty_value(g, h)


def irls(z, h, lam, g0, tol, max_iter):
    """Penalized Poisson IRLS with step halving.

    Returns ``(g, objective, iterations, status, trace)``.
    """
    z = np.asarray(z, dtype=float)
    h = np.asarray(h, dtype=float)
    c = 2.0 * lam
    g = np.array(g0, dtype=float)
    obj = objective(z, h, lam, g)
    trace = [obj]
    if not np.isfinite(obj):
        return g, obj, 0, STATUS_NONFINITE, trace
    status = STATUS_MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        d = np.exp(-g)
        u = g + z * d - 1.0
        try:
            g_new = reinsch_solve(u, d, h, c)
        except np.linalg.LinAlgError:
            status = STATUS_NONFINITE
            break
        if not np.all(np.isfinite(g_new)):
            obj_new = np.inf
        else:
            obj_new = objective(z, h, lam, g_new)
        halvings = 0
        while not obj_new <= obj and halvings < _MAX_HALVINGS:
            g_new = 0.5 * (g + g_new)
            obj_new = objective(z, h, lam, g_new)
            halvings += 1
        if not obj_new <= obj:
            status = STATUS_STALLED
            break
        rel = (obj - obj_new) / max(abs(obj_new), 1.0)
        g, obj = g_new, obj_new
        trace.append(obj)
        if rel < tol:
            status = STATUS_CONVERGED
            break
    return g, obj, it, status, trace
