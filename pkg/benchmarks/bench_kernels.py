"""Compare the compiled and pure-Python IRLS kernels.

Run with ``python3 benchmarks/bench_kernels.py``. Prints per-call timings
and the largest disagreement between the backends on the same inputs.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from lhspline import kernels
from lhspline.binning import build_histogram
from lhspline.evt import egpd_simulate
from lhspline.fit import initial_values, pilot_lambda


def _problem(n_obs: int, n_bins: int, seed: int):
    y = egpd_simulate(n_obs, 0.8, 8.5, 0.2, np.random.default_rng(seed))
    hist = build_histogram(y, n_bins=n_bins)
    z = np.asarray(hist.counts, dtype=float)
    h = np.diff(hist.knots)
    return z, h, pilot_lambda(hist)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-obs", type=int, default=18250)
    ap.add_argument("--bins", type=int, nargs="+", default=[150, 500, 2000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    py = kernels.python_backend
    print(f"active backend: {kernels.BACKEND}")
    if kernels.BACKEND == "python":
        print("compiled extension not built; timings below compare python with itself")
    print(f"{'bins':>6} {'kernel':>14} {'active ms':>10} {'python ms':>10} "
          f"{'speedup':>8} {'max |diff|':>11}")
    for n_bins in args.bins:
        z, h, lam = _problem(args.n_obs, n_bins, seed=1)
        g0 = initial_values(z)
        w = np.exp(g0)
        u = g0 + (z - w) / w
        cases = {
            "reinsch_solve": (lambda m: m.reinsch_solve(u, 1.0 / w, h, 2.0 * lam)),
            "irls": (lambda m: m.irls(z, h, lam, g0, 1e-8, 100)[0]),
        }
        for name, call in cases.items():
            number = 20 if name == "irls" else 200
            fast = min(timeit.repeat(lambda: call(kernels), number=number,
                                     repeat=args.repeat)) / number
            slow = min(timeit.repeat(lambda: call(py), number=number,
                                     repeat=args.repeat)) / number
            diff = float(np.max(np.abs(call(kernels) - call(py))))
            print(f"{n_bins:>6} {name:>14} {1e3 * fast:>10.4f} {1e3 * slow:>10.4f} "
                  f"{slow / fast:>8.2f} {diff:>11.3g}")


if __name__ == "__main__":
    main()
