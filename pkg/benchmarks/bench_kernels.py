"""Compare the numpy and compiled kernel backends on the hot shapes.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeats N]

Each kernel is timed with a warmup call and the median of N runs; the
table reports both backends plus the speedup, and checks the results
agree to 1e-12 while it is at it.
"""

import argparse
import statistics
import time

import numpy as np

from richunet.errors import ConfigError
from richunet.kernels import get_backend
from richunet.rng import SplitMix64


def _median_time(fn, repeats):
    fn()  # warmup
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _cases(rng, ref_bk):
    # one shared set of inputs; closures differ only in the backend
    x16 = rng.normal((4, 16, 64, 64))
    w16 = rng.normal((16, 16, 3, 3))
    b16 = rng.normal((16,))
    gy16 = rng.normal((4, 16, 64, 64))

    x64 = rng.normal((2, 64, 16, 16))
    w64 = rng.normal((64, 64, 3, 3))
    gy64 = rng.normal((2, 64, 16, 16))

    xd = rng.normal((4, 32, 32, 32))
    wd = rng.normal((32, 3, 3))
    bd = rng.normal((32,))
    gyd = rng.normal((4, 32, 32, 32))

    xp = rng.normal((4, 32, 64, 64))
    _, arg = ref_bk.maxpool2x2_forward(xp)
    gyp = rng.normal(arg.shape)

    def make(bk):
        return [
            ("conv3x3 fwd 4x16x64x64", lambda: bk.conv2d_forward(x16, w16, b16, 1, 1)),
            ("conv3x3 bwd-in         ", lambda: bk.conv2d_backward_input(gy16, w16, 64, 64, 1, 1)),
            ("conv3x3 bwd-w          ", lambda: bk.conv2d_backward_weight(gy16, x16, 3, 1, 1)),
            ("conv3x3 fwd 2x64x16x16", lambda: bk.conv2d_forward(x64, w64, None, 1, 1)),
            ("conv3x3 bwd-in deep    ", lambda: bk.conv2d_backward_input(gy64, w64, 16, 16, 1, 1)),
            ("dwconv3x3 fwd          ", lambda: bk.dwconv2d_forward(xd, wd, bd, 1, 1)),
            ("dwconv3x3 bwd-in       ", lambda: bk.dwconv2d_backward_input(gyd, wd, 32, 32, 1, 1)),
            ("dwconv3x3 bwd-w        ", lambda: bk.dwconv2d_backward_weight(gyd, xd, 3, 1, 1)),
            ("maxpool2x2 fwd         ", lambda: bk.maxpool2x2_forward(xp)),
            ("maxpool2x2 bwd         ", lambda: bk.maxpool2x2_backward(gyp, arg)),
        ]

    return make


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7)
    args = ap.parse_args()

    np_bk = get_backend("numpy")
    try:
        cy_bk = get_backend("cython")
    except ConfigError:
        print("compiled extension not available; nothing to compare")
        print("build it with: pip install -e . --no-build-isolation")
        return 1

    make = _cases(SplitMix64(2024), np_bk)
    np_cases = make(np_bk)
    cy_cases = make(cy_bk)

    print(f"{'kernel':<24} {'numpy':>10} {'cython':>10} {'speedup':>8}")
    print("-" * 56)
    for (label, np_fn), (_, cy_fn) in zip(np_cases, cy_cases):
        ra, rb = np_fn(), cy_fn()
        if isinstance(ra, tuple):
            mism = max(np.abs(a - b).max() for a, b in zip(ra, rb))
        else:
            mism = np.abs(ra - rb).max()
        # summation order differs between backends; roundoff grows with
        # the reduction size, so the agreement bar here is looser than
        # the unit-test one on small shapes
        if mism > 1e-9:
            print(f"{label:<24} BACKENDS DISAGREE by {mism:g}")
            return 1
        ta = _median_time(np_fn, args.repeats)
        tb = _median_time(cy_fn, args.repeats)
        print(f"{label:<24} {ta*1e3:>8.2f}ms {tb*1e3:>8.2f}ms {ta/tb:>7.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
