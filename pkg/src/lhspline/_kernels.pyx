# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled penalized Poisson kernels.

Same signatures and return conventions as ``_pykernels``. The pentadiagonal
and tridiagonal systems are solved by an LDL^T sweep instead of LAPACK, so
results agree with the fallback to rounding, not bit for bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, isfinite

cnp.import_array()

STATUS_CONVERGED = 0
STATUS_MAX_ITER = 1
STATUS_STALLED = 2
STATUS_NONFINITE = 3

cdef int _MAX_HALVINGS = 40


cdef int _penta_ldl_solve(double[::1] d0, double[::1] d1, double[::1] d2,
                          double[::1] x) nogil:
    # In-place LDL^T of a symmetric pentadiagonal matrix; rhs in x.
    cdef Py_ssize_t m = d0.shape[0]
    cdef Py_ssize_t k
    cdef double l1, l2
    for k in range(m):
        if k >= 1:
            d0[k] -= d1[k - 1] * d1[k - 1] * d0[k - 1]
            if k >= 2:
                d0[k] -= d2[k - 2] * d2[k - 2] * d0[k - 2]
        if not d0[k] > 0.0:
            return -1
        if k + 1 < m:
            if k >= 1:
                d1[k] -= d1[k - 1] * d2[k - 1] * d0[k - 1]
            d1[k] /= d0[k]
        if k + 2 < m:
            d2[k] /= d0[k]
    # forward
    for k in range(1, m):
        x[k] -= d1[k - 1] * x[k - 1]
        if k >= 2:
            x[k] -= d2[k - 2] * x[k - 2]
    for k in range(m):
        x[k] /= d0[k]
    # backward
    k = m - 2
    while k >= 0:
        x[k] -= d1[k] * x[k + 1]
        if k + 2 < m:
            x[k] -= d2[k] * x[k + 2]
        k -= 1
    return 0


cdef void _second_diff(const double[::1] g, const double[::1] h,
                       double[::1] out) nogil:
    cdef Py_ssize_t k
    for k in range(g.shape[0] - 2):
        out[k] = (g[k] / h[k] - g[k + 1] * (1.0 / h[k] + 1.0 / h[k + 1])
                  + g[k + 2] / h[k + 1])


cdef int _tridiag_gram_solve(const double[::1] h, double[::1] x,
                             double[::1] work0, double[::1] work1) nogil:
    # Solve R x = rhs (rhs in x), R the interior Gram matrix.
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t k
    for k in range(m):
        work0[k] = (h[k] + h[k + 1]) / 3.0
        if k + 1 < m:
            work1[k] = h[k + 1] / 6.0
    for k in range(m):
        if k >= 1:
            work0[k] -= work1[k - 1] * work1[k - 1] * work0[k - 1]
        if not work0[k] > 0.0:
            return -1
        if k + 1 < m:
            work1[k] /= work0[k]
    for k in range(1, m):
        x[k] -= work1[k - 1] * x[k - 1]
    for k in range(m):
        x[k] /= work0[k]
    k = m - 2
    while k >= 0:
        x[k] -= work1[k] * x[k + 1]
        k -= 1
    return 0


cdef double _penalty(const double[::1] g, const double[::1] h,
                     double[::1] qg, double[::1] gam,
                     double[::1] w0, double[::1] w1) nogil:
    cdef Py_ssize_t k, m = g.shape[0] - 2
    cdef double acc = 0.0
    _second_diff(g, h, qg)
    for k in range(m):
        gam[k] = qg[k]
    _tridiag_gram_solve(h, gam, w0, w1)
    for k in range(m):
        acc += qg[k] * gam[k]
    return acc


cdef double _objective(const double[::1] z, const double[::1] h, double lam,
                       const double[::1] g, double[::1] qg, double[::1] gam,
                       double[::1] w0, double[::1] w1) nogil:
    cdef Py_ssize_t j
    cdef double nll = 0.0
    for j in range(g.shape[0]):
        nll += exp(g[j]) - z[j] * g[j]
    if not isfinite(nll):
        return nll
    return nll + lam * _penalty(g, h, qg, gam, w0, w1)


cdef int _reinsch(const double[::1] u, const double[::1] d,
                  const double[::1] h, double c, double[::1] out,
                  double[::1] d0, double[::1] d1, double[::1] d2,
                  double[::1] gam) nogil:
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t m = n - 2
    cdef Py_ssize_t k
    cdef double ak, bk, ek
    for k in range(m):
        ak = 1.0 / h[k]
        bk = -(1.0 / h[k] + 1.0 / h[k + 1])
        ek = 1.0 / h[k + 1]
        d0[k] = ((h[k] + h[k + 1]) / 3.0
                 + c * (d[k] * ak * ak + d[k + 1] * bk * bk + d[k + 2] * ek * ek))
        if k + 1 < m:
            d1[k] = (h[k + 1] / 6.0
                     + c * (d[k + 1] * bk * (1.0 / h[k + 1])
                            + d[k + 2] * ek * -(1.0 / h[k + 1] + 1.0 / h[k + 2])))
        if k + 2 < m:
            d2[k] = c * d[k + 2] * ek * (1.0 / h[k + 2])
        gam[k] = ak * u[k] + bk * u[k + 1] + ek * u[k + 2]
    if _penta_ldl_solve(d0, d1, d2, gam) != 0:
        return -1
    for k in range(n):
        out[k] = 0.0
    for k in range(m):
        out[k] += gam[k] / h[k]
        out[k + 1] -= gam[k] * (1.0 / h[k] + 1.0 / h[k + 1])
        out[k + 2] += gam[k] / h[k + 1]
    for k in range(n):
        out[k] = u[k] - c * d[k] * out[k]
    return 0


def second_diff(g, h):
    """Return Q^T g, the (N-2)-vector of scaled second differences."""
    cdef const double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    out = np.empty(gv.shape[0] - 2)
    _second_diff(gv, hv, out)
    return out


def interior_second_derivs(g, h):
    """Solve R gamma = Q^T g for the interior second derivatives."""
    cdef const double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t m = gv.shape[0] - 2
    out = np.empty(m)
    _second_diff(gv, hv, out)
    if _tridiag_gram_solve(hv, out, np.empty(m), np.empty(m)) != 0:
        raise np.linalg.LinAlgError("knot Gram matrix not positive definite")
    return out


def penalty_value(g, h):
    """Return g^T K g = integral of the squared second derivative."""
    cdef const double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t m = gv.shape[0] - 2
    return _penalty(gv, hv, np.empty(m), np.empty(m), np.empty(m), np.empty(m))


def q_times(gamma, h):
    """Return Q gamma, an N-vector, for gamma with N-2 entries."""
    cdef const double[::1] gv = np.ascontiguousarray(gamma, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t k, m = gv.shape[0]
    out_arr = np.zeros(m + 2)
    cdef double[::1] out = out_arr
    for k in range(m):
        out[k] += gv[k] / hv[k]
        out[k + 1] -= gv[k] * (1.0 / hv[k] + 1.0 / hv[k + 1])
        out[k + 2] += gv[k] / hv[k + 1]
    return out_arr


def reinsch_solve(u, d, h, double c):
    """Solve (W + c K) g = W u with W = diag(1/d) by the Reinsch reduction."""
    cdef const double[::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[::1] dv = np.ascontiguousarray(d, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t n = uv.shape[0], m = n - 2
    out = np.empty(n)
    if _reinsch(uv, dv, hv, c, out, np.empty(m), np.empty(m), np.empty(m),
                np.empty(m)) != 0:
        raise np.linalg.LinAlgError("reduced system not positive definite")
    return out


def objective(z, h, double lam, g):
    cdef const double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef const double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t m = gv.shape[0] - 2
    return _objective(zv, hv, lam, gv, np.empty(m), np.empty(m), np.empty(m),
                      np.empty(m))


def irls(z, h, double lam, g0, double tol, int max_iter):
    """Penalized Poisson IRLS with step halving.

    Returns ``(g, objective, iterations, status, trace)``.
    """
    cdef const double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    g_arr = np.array(g0, dtype=np.float64)
    cdef double[::1] g = g_arr
    cdef Py_ssize_t n = g.shape[0], m = n - 2, j
    cdef double[::1] gn = np.empty(n)
    cdef double[::1] u = np.empty(n)
    cdef double[::1] d = np.empty(n)
    cdef double[::1] s0 = np.empty(m)
    cdef double[::1] s1 = np.empty(m)
    cdef double[::1] s2 = np.empty(m)
    cdef double[::1] s3 = np.empty(m)
    cdef double c = 2.0 * lam
    cdef double obj, obj_new, rel, scale
    cdef int it = 0, halvings, status = STATUS_MAX_ITER
    cdef bint finite
    obj = _objective(zv, hv, lam, g, s0, s1, s2, s3)
    trace = [obj]
    if not isfinite(obj):
        return g_arr, obj, 0, STATUS_NONFINITE, trace
    for it in range(1, max_iter + 1):
        for j in range(n):
            d[j] = exp(-g[j])
            u[j] = g[j] + zv[j] * d[j] - 1.0
        if _reinsch(u, d, hv, c, gn, s0, s1, s2, s3) != 0:
            status = STATUS_NONFINITE
            break
        finite = True
        for j in range(n):
            if not isfinite(gn[j]):
                finite = False
                break
        if finite:
            obj_new = _objective(zv, hv, lam, gn, s0, s1, s2, s3)
        else:
            obj_new = np.inf
        halvings = 0
        while not obj_new <= obj and halvings < _MAX_HALVINGS:
            for j in range(n):
                gn[j] = 0.5 * (g[j] + gn[j])
            obj_new = _objective(zv, hv, lam, gn, s0, s1, s2, s3)
            halvings += 1
        if not obj_new <= obj:
            status = STATUS_STALLED
            break
        scale = fabs(obj_new)
        if scale < 1.0:
            scale = 1.0
        rel = (obj - obj_new) / scale
        for j in range(n):
            g[j] = gn[j]
        obj = obj_new
        trace.append(obj)
        if rel < tol:
            status = STATUS_CONVERGED
            break
    return g_arr, obj, it, status, trace
