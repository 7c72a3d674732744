"""Benchmark the compiled warp kernels against the numpy fallback.

Usage: python benchmarks/bench_warp.py [--n 320] [--repeats 20]
"""

import argparse
import time

import numpy as np

from diffeometer._kernels import warp_py
from diffeometer.rng import derive_stream

try:
    from diffeometer._kernels import warp_cy
except ImportError:
    warp_cy = None


def timeit(fn, repeats):
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=320, help="image side in pixels")
    parser.add_argument("--channels", type=int, default=3)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rng = derive_stream(0)
    image = rng.random((args.channels, args.n, args.n))
    idx = np.arange(args.n, dtype=float)
    src_u = idx[:, None] + rng.uniform(-2, 2, (args.n, args.n))
    src_v = idx[None, :] + rng.uniform(-2, 2, (args.n, args.n))

    cases = {
        "bilinear": lambda mod: mod.warp_bilinear(image, src_u, src_v),
        "gaussian": lambda mod: mod.warp_gaussian(image, src_u, src_v, 0.4715, 3),
    }
    print(f"image {args.channels}x{args.n}x{args.n}, best of {args.repeats}")
    print(f"{'kernel':<10} {'numpy':>12} {'cython':>12} {'speedup':>9}")
    for name, call in cases.items():
        t_py = timeit(lambda: call(warp_py), args.repeats)
        if warp_cy is None:
            print(f"{name:<10} {t_py * 1e3:>10.2f}ms {'(not built)':>12}")
            continue
        t_cy = timeit(lambda: call(warp_cy), args.repeats)
        print(f"{name:<10} {t_py * 1e3:>10.2f}ms {t_cy * 1e3:>10.2f}ms {t_py / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
