#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy twins.

Run:  python benchmarks/bench_kernels.py [--repeats N]
Force the numpy-only path for comparison runs with VIDINSTRUCT_DISABLE_NUMBA=1
(then only the numpy column is populated).
"""

import argparse
import time

import numpy as np

from vidinstruct import kernels


def timeit(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    x = rng.normal(size=(100, 256, 1024))          # production pooling load
    v = rng.normal(size=(356, 1024))
    w = rng.normal(size=(1024, 4096))
    b = rng.normal(size=4096)
    upstream = rng.normal(size=(356, 4096))
    grad_t = rng.normal(size=(256, 1024))
    grad_z = rng.normal(size=(100, 1024))
    frame = rng.integers(0, 256, size=(1080, 1920, 3)).astype(np.uint8)
    sigs = rng.random(size=(600, 96))
    sig_a, sig_b = sigs[0], sigs[1]

    twins = kernels.numba_twins()
    cases = [
        ("temporal_mean (100x256x1024)", "temporal_mean",
         kernels.temporal_mean_numpy, (x,)),
        ("spatial_mean  (100x256x1024)", "spatial_mean",
         kernels.spatial_mean_numpy, (x,)),
        ("affine (356x1024 @ 1024x4096)", "affine",
         kernels.affine_numpy, (v, w, b)),
        ("affine_backward", "affine_backward",
         kernels.affine_backward_numpy, (v, w, upstream)),
        ("pool_grad_scatter", "pool_grad_scatter",
         kernels.pool_grad_scatter_numpy, (grad_t, grad_z)),
        ("channel_histograms (1080p)", "channel_histograms",
         kernels.channel_histograms_numpy, (frame, 32)),
        ("l1_distance", "l1_distance",
         kernels.l1_distance_numpy, (sig_a, sig_b)),
        ("farthest_point (600 frames, k=16)", "farthest_point",
         kernels.farthest_point_numpy, (sigs, 16)),
    ]

    active = kernels.backend()
    print(f"active backend: {active}")
    if twins:
        print("warming up JIT...")
        kernels.warmup()
        for _, twin_name, _, call_args in cases:
            twins[twin_name](*call_args)

    header = f"{'kernel':<36}{'numpy (ms)':>12}"
    if twins:
        header += f"{'numba (ms)':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, twin_name, reference, call_args in cases:
        ref_ms = timeit(reference, *call_args, repeats=args.repeats) * 1e3
        line = f"{name:<36}{ref_ms:>12.2f}"
        if twins:
            fast_ms = timeit(twins[twin_name], *call_args,
                             repeats=args.repeats) * 1e3
            line += f"{fast_ms:>12.2f}{ref_ms / fast_ms:>10.2f}x"
        print(line)


if __name__ == "__main__":
    main()
