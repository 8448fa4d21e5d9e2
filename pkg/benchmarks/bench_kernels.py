"""Time the compiled kernels against the numpy fallback on desk-sized maps.

    python3 benchmarks/bench_kernels.py [--cells 2028] [--repeat 5]

The compiled extension must be built (``python3 setup.py build_ext --inplace``)
for the cython column to appear.
"""
import argparse
import statistics
import time

import numpy as np

from geomatch import _kernels_py

try:
    from geomatch import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def timed(fn, repeat):
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs)


def cases(n, rng):
    f = rng.normal(size=(3, 3))
    pa = rng.uniform(0, 832, size=(n, 2))
    pb = rng.uniform(0, 832, size=(n, 2))
    m = rng.random((n, n))
    pd = rng.uniform(0.5, 1.0, size=(n, n))
    return {
        "sampson_dense": lambda k: k.sampson_dense(f, pa, pb),
        "geometric_confidence_dense": lambda k: k.geometric_confidence_dense(f, pa, pb, 10.0),
        "scale_minmax": lambda k: k.scale_minmax(m, pd, 1.2),
        "row_col_argmax": lambda k: k.row_col_argmax(m),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, default=52 * 39, help="cells per image (52x39 is the 832x624 / 16 px grid)")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{args.cells} x {args.cells} maps, median of {args.repeat}")
    print(f"{'kernel':<28}{'numpy [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    for name, run in cases(args.cells, rng).items():
        t_py = timed(lambda: run(_kernels_py), args.repeat)
        if _kernels_c is None:
            print(f"{name:<28}{t_py:12.4f}{'-':>12}{'-':>10}")
            continue
        np.testing.assert_allclose(run(_kernels_c), run(_kernels_py), rtol=1e-12)
        t_c = timed(lambda: run(_kernels_c), args.repeat)
        print(f"{name:<28}{t_py:12.4f}{t_c:12.4f}{t_py / t_c:9.2f}x")


if __name__ == "__main__":
    main()
