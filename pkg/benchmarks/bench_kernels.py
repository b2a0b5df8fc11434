"""Compare the compiled and pure-Python hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Prints the median time per call for each kernel and backend, the speed-up,
and the max absolute difference between the two outputs.
"""

import argparse
import statistics
import time

import numpy as np

from divdrive._kernels import _pykernels

try:
    from divdrive._kernels import _ckernels
except ImportError:
    _ckernels = None


def _time(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def cases(rng):
    x = rng.standard_normal((32, 16, 16, 16))
    cols = _pykernels.im2col(x, 3, 1, 1)
    pts = rng.uniform(-20, 20, (4096, 2))
    poly = np.array([[-10.0, -5.0], [12.0, -8.0], [15.0, 6.0], [0.0, 14.0], [-12.0, 7.0]])
    return {
        "im2col": lambda k: k.im2col(x, 3, 1, 1),
        "col2im": lambda k: k.col2im(cols, x.shape, 3, 1, 1),
        "points_in_polygon": lambda k: k.points_in_polygon(pts[:, 0], pts[:, 1], poly),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'python ms':>12}{'cython ms':>12}{'speed-up':>10}{'max |diff|':>14}")
    for name, call in cases(rng).items():
        tp = _time(lambda: call(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:<20}{tp * 1e3:>12.3f}{'n/a':>12}{'':>10}{'':>14}")
            continue
        tc = _time(lambda: call(_ckernels), args.repeat)
        diff = np.max(np.abs(np.asarray(call(_pykernels), dtype=np.float64)
                             - np.asarray(call(_ckernels), dtype=np.float64)))
        print(f"{name:<20}{tp * 1e3:>12.3f}{tc * 1e3:>12.3f}{tp / tc:>10.2f}{diff:>14.3g}")


if __name__ == "__main__":
    main()
