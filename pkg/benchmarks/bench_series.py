"""Compare the compiled and pure-Python compound-Poisson kernels.

    python benchmarks/bench_series.py [--repeat N]

Times the raw series kernel on a vector of observations and a full
compound-Poisson GLMM fit with each available backend.
"""
import argparse
import timeit

import numpy as np

from mglmmnet import _kernels
from mglmmnet.families import CompoundPoisson
from mglmmnet.glmm import ResponseSpec, fit
from mglmmnet.simulate import MglmmSpec, child_rng, simulate_dataset


def kernel_case(n):
    y = child_rng(0).gamma(2.0, 1.0, size=n)
    return lambda: _kernels.wright_log_sum(y, 1.5, 0.8)


def fit_case(groups):
    levels = ["6", "12", "18"]
    spec = MglmmSpec([ResponseSpec("y", CompoundPoisson(1.5))], {"y": dict(zip(levels, (-0.3, 0.0, 0.3)))},
                     {"y": 1.0}, np.array([[0.5]]), groups, levels)
    table, _ = simulate_dataset(spec, 1)
    return lambda: fit(table, ResponseSpec("y", CompoundPoisson(1.5)))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    cases = [("kernel, 10^4 obs", kernel_case(10_000)), ("kernel, 10^5 obs", kernel_case(100_000)),
             ("fit, 50 groups", fit_case(50))]
    backends = _kernels.available_backends()
    before = _kernels.BACKEND
    print(f"{'case':<20}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    try:
        for label, fn in cases:
            times = {}
            for b in backends:
                _kernels.use_backend(b)
                fn()
                times[b] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            row = f"{label:<20}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
            if "cython" in times:
                row += f"{times['python'] / times['cython']:>11.1f}x"
            print(row)
    finally:
        _kernels.use_backend(before)


if __name__ == "__main__":
    main()
