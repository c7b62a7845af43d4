"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from sketchlearn import kernels
from sketchlearn.sketch import random_countsketch

CASES = [(256, 32, 64), (4096, 64, 256), (20000, 128, 1000)]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    impls = kernels.implementations()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(impls)}")
    print(f"{'kernel':<18}{'n':>7}{'d':>6}{'m':>6}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}")
    rng = np.random.default_rng(0)
    for n, d, m in CASES:
        S = random_countsketch(m, n, 1)
        A = rng.standard_normal((n, d))
        B = rng.standard_normal((d, n))
        centers = rng.standard_normal((m, d))
        jobs = {
            "cs_apply_rows": lambda impl: kernels.cs_apply_rows(S.p, S.v, A, m, impl),
            "cs_apply_cols": lambda impl: kernels.cs_apply_cols(S.p, S.v, B, m, impl),
            "argmax_abs_inner": lambda impl: kernels.argmax_abs_inner(centers, A, impl),
        }
        for name, job in jobs.items():
            times = {key: min(timeit.repeat(lambda: job(mod), number=1, repeat=args.repeat))
                     for key, mod in impls.items()}
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{name:<18}{n:>7}{d:>6}{m:>6}" + "".join(f"{t * 1e3:>10.3f}ms" for t in times.values())
                  + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
