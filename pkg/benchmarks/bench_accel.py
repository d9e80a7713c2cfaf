"""Compare the numba-accelerated kernels against the pure-numpy fallback.

Runs itself twice (ABELSCALE_NUMBA=1 / 0) and reports timings for the two
hot kernels: Abel weight-matrix assembly and the weakly-singular inner
quadrature used by the kernel diagnostics.

    python benchmarks/bench_accel.py
"""

import os
import subprocess
import sys
import time

import numpy as np


def time_kernels():
    from abelscale._accel import USING_NUMBA, abel_weights, inner_quadrature

    mode = "numba" if USING_NUMBA else "numpy"
    # warm-up (JIT compilation in numba mode)
    abel_weights(64, 0.5)
    smooth = np.vstack([np.linspace(1.0, 2.0, 2001), np.ones(2001)])
    inner_quadrature(np.array([0.1, 0.2]), 0.9, 0.5, smooth, 5e-4,
                     np.array([-0.5, 0.5]), 64, 2.5e-4)

    results = {}
    for n in (1000, 3000):
        t0 = time.perf_counter()
        for _ in range(3):
            abel_weights(n, 0.5)
        results[f"abel_weights n={n}"] = (time.perf_counter() - t0) / 3

    s_arr = np.linspace(0.001, 0.89, 400)
    t0 = time.perf_counter()
    for _ in range(5):
        inner_quadrature(s_arr, 0.9, 0.5, smooth, 5e-4,
                         np.array([-0.5, 0.5]), 128, 2.5e-4)
    results["inner_quadrature 400x128"] = (time.perf_counter() - t0) / 5

    for name, sec in results.items():
        print(f"  {mode:>5} | {name:<28} {sec * 1e3:8.2f} ms")


def main():
    if os.environ.get("ABELSCALE_BENCH_CHILD"):
        time_kernels()
        return
    print("kernel timings (best of repeated runs)", flush=True)
    for flag in ("1", "0"):
        env = dict(os.environ, ABELSCALE_NUMBA=flag, ABELSCALE_BENCH_CHILD="1")
        subprocess.run([sys.executable, __file__], env=env, check=True)


if __name__ == "__main__":
    main()
