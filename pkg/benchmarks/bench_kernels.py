"""Compare the compiled and numpy kernel backends.

Usage: python benchmarks/bench_kernels.py [--sizes 16 32 48] [--repeat 5]
"""
import argparse
import time

import numpy as np

from cosserat_lab import kernels
from cosserat_lab.geometry import random_rotations


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 48])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--p", type=float, default=2.5)
    args = ap.parse_args(argv)

    backends = kernels.backends()
    if "cython" not in backends:
        print("compiled backend not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<11}{'n':>5}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for n in args.sizes:
        R = random_rotations(rng, (n, n, n))
        u = rng.standard_normal((n, n, n, 3))
        h = 1.0 / (n - 1)
        cases = {
            "pdirichlet": lambda b: b.pdirichlet(R, h, args.p, 1e-3),
            "laplace7": lambda b: b.laplace7(u, h),
        }
        for name, call in cases.items():
            times = {b: _best(lambda m=m: call(m), args.repeat) for b, m in backends.items()}
            ref = call(backends["python"])
            for b, m in backends.items():
                out = call(m)
                a, c = (ref[0], out[0]) if isinstance(ref, tuple) else (ref, out)
                scale = max(float(np.max(np.abs(a))), 1.0)
                assert np.max(np.abs(a - c)) <= 1e-12 * scale, f"{b} disagrees on {name}"
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{name:<11}{n:>5}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
                  + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
