"""Time the numba and numpy paths of the numeric kernels.

    python benchmarks/bench_kernels.py [--size 256] [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from xgans import kernels
from xgans.evaluation import ssim


def bench(fn, repeat):
    fn()  # warm-up (and numba compilation)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    gray = rng.uniform(size=(args.size, args.size))
    a = rng.uniform(-1, 1, (args.size, args.size, 3))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), -1, 1)
    taps = kernels.gaussian_window()
    cases = {
        "sobel_magnitude": lambda: kernels.sobel_magnitude(gray),
        "filter_valid": lambda: kernels.filter_valid(gray, taps),
        "ssim": lambda: ssim(a, b),
    }
    backends = ["numpy"] + (["numba"] if kernels.HAS_NUMBA else [])
    print(f"{args.size}x{args.size}, best of {args.repeat}")
    print(f"{'kernel':18s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    prev = kernels.BACKEND
    try:
        for name, fn in cases.items():
            times = []
            for backend in backends:
                kernels.set_backend(backend)
                times.append(bench(fn, args.repeat))
            row = f"{name:18s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times)
            if len(times) == 2:
                row += f"  {times[0] / times[1]:8.2f}x"
            print(row)
    finally:
        kernels.set_backend(prev)


if __name__ == "__main__":
    main()
