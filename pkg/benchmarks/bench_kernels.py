#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times each of the six dataflow inner loops on the reference layer
shapes (32x32x8 conv with 8 filters; 8192 -> 10 dense) and prints the
per-pass wall time and speedup. Both backends are bit-exact; the
outputs are cross-checked here as well.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from claccel import _kernels_py
from claccel.convsim import snake_order

try:
    from claccel import _kernels as _compiled
except ImportError:
    _compiled = None


def build_cases(seed=0):
    rng = np.random.default_rng(seed)
    lim = 1200  # keeps the reference shapes saturation-free
    vpad = rng.integers(-lim, lim, (8, 34, 34)).astype(np.int16)
    kern = rng.integers(-lim, lim, (8, 8, 3, 3)).astype(np.int16)
    gout = rng.integers(-lim, lim, (8, 32, 32)).astype(np.int16)
    order = snake_order(32, 32)
    ifeat = rng.integers(-lim, lim, 8192).astype(np.int16)
    wmat = rng.integers(-lim, lim, (10, 8192)).astype(np.int16)
    dypad = rng.integers(-lim, lim, 16).astype(np.int16)
    dypad[10:] = 0
    wpad = np.zeros((16, 8192), np.int16)
    wpad[:10] = wmat
    dy = dypad[:10].copy()

    return [
        ("conv forward", "conv_forward_raw",
         (vpad, kern), lambda: np.empty((8, 32, 32), np.int16)),
        ("conv kernel grad", "conv_kernel_grad_raw",
         (gout, vpad, order), lambda: np.empty((8, 8, 3, 3), np.int16)),
        ("dense forward", "dense_forward_raw",
         (ifeat, wmat), lambda: np.empty(10, np.int16)),
        ("dense input grad", "dense_input_grad_raw",
         (dypad, wpad), lambda: np.empty(8192, np.int16)),
        ("dense weight grad", "dense_weight_grad_raw",
         (ifeat, dy), lambda: np.empty((10, 8192), np.int16)),
    ]


def time_call(fn, args, make_out, repeats):
    best = float("inf")
    out = make_out()
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args, out)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    cases = build_cases()
    print(f"{'pass':<20}{'numpy':>12}{'compiled':>12}{'speedup':>10}")
    for name, fname, call_args, make_out in cases:
        t_py, out_py = time_call(getattr(_kernels_py, fname), call_args,
                                 make_out, args.repeats)
        if _compiled is None:
            print(f"{name:<20}{t_py * 1e3:>10.2f}ms{'n/a':>12}{'':>10}")
            continue
        t_c, out_c = time_call(getattr(_compiled, fname), call_args,
                               make_out, args.repeats)
        assert np.array_equal(out_py, out_c), f"{name}: backends disagree"
        print(f"{name:<20}{t_py * 1e3:>10.2f}ms{t_c * 1e3:>10.2f}ms"
              f"{t_py / t_c:>9.1f}x")
    if _compiled is None:
        print("\ncompiled extension not built; showing fallback only")


if __name__ == "__main__":
    main()
