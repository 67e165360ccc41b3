"""Kernel backend selection.

The compiled extension is used when importable; set ``LHSPLINE_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

BACKEND = "python"
if os.environ.get("LHSPLINE_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = None
else:
    _impl = None
if _impl is None:
    from . import _pykernels as _impl

from . import _pykernels as python_backend  # noqa: E402

STATUS_CONVERGED = 0
STATUS_MAX_ITER = 1
STATUS_STALLED = 2
STATUS_NONFINITE = 3

second_diff = _impl.second_diff
interior_second_derivs = _impl.interior_second_derivs
penalty_value = _impl.penalty_value
q_times = _impl.q_times
reinsch_solve = _impl.reinsch_solve
objective = _impl.objective
irls = _impl.irls
