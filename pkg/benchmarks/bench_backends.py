#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Runs each hot kernel on representative shapes plus the end-to-end explain
step, and prints per-kernel timings and speedups. The jitted functions are
warmed up before timing so compilation is excluded.

Usage: python3 benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from gcame import kernels
from gcame.backend import HAVE_NUMBA


def best_of(fn, repeats):
    fn()  # warm-up / JIT
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_pair(name, np_fn, nb_fn, repeats):
    t_np = best_of(np_fn, repeats)
    t_nb = best_of(nb_fn, repeats) if nb_fn is not None else float("nan")
    speedup = t_np / t_nb if nb_fn is not None else float("nan")
    print(f"{name:<34} numpy {t_np * 1e3:9.3f} ms   numba {t_nb * 1e3:9.3f} ms   x{speedup:6.2f}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    if not HAVE_NUMBA:
        print("numba not importable; only the numpy path can run")

    rng = np.random.default_rng(0)

    # stem-like patchify conv: 3 -> 64 channels, 8x8 kernel, stride 8
    x_img = rng.uniform(0, 1, (3, 64, 64)).astype(np.float32)
    w_stem = rng.normal(size=(64, 3, 8, 8)).astype(np.float32)
    b_stem = np.zeros(64, np.float32)
    bench_pair(
        "conv2d 3->64 8x8/s8 on 64x64",
        lambda: kernels.conv2d_np(x_img, w_stem, b_stem, 8, 0),
        (lambda: kernels.conv2d_nb(x_img, w_stem, b_stem, 8, 0)) if HAVE_NUMBA else None,
        args.repeats,
    )

    # neck-like 3x3 conv: 64 -> 64 channels on an 8x8 map
    x_feat = rng.uniform(0, 1, (64, 8, 8)).astype(np.float32)
    w_neck = rng.normal(size=(64, 64, 3, 3)).astype(np.float32)
    b_neck = np.zeros(64, np.float32)
    bench_pair(
        "conv2d 64->64 3x3/p1 on 8x8",
        lambda: kernels.conv2d_np(x_feat, w_neck, b_neck, 1, 1),
        (lambda: kernels.conv2d_nb(x_feat, w_neck, b_neck, 1, 1)) if HAVE_NUMBA else None,
        args.repeats,
    )

    m = rng.uniform(0, 1, (8, 8)).astype(np.float32)
    bench_pair(
        "bilinear resize 8x8 -> 640x640",
        lambda: kernels.resize_bilinear_np(m, 640, 640),
        (lambda: kernels.resize_bilinear_nb(m, 640, 640)) if HAVE_NUMBA else None,
        args.repeats,
    )

    k = 256
    feats = rng.uniform(0, 1, (k, 16, 16)).astype(np.float32)
    alphas = rng.normal(size=k)
    sigmas = np.abs(rng.normal(1.5, 0.5, k)) + 0.1
    ci = rng.integers(0, 16, k)
    cj = rng.integers(0, 16, k)
    use = np.ones(k, np.bool_)
    bench_pair(
        "masked accumulate K=256 16x16",
        lambda: kernels.accumulate_masked_np(feats, alphas, sigmas, ci, cj, use),
        (lambda: kernels.accumulate_masked_nb(feats, alphas, sigmas, ci, cj, use)) if HAVE_NUMBA else None,
        args.repeats,
    )

    # end-to-end explain on the configured backend
    from gcame.backend import backend_name
    from gcame.fixtures import add_cell_square, background_image
    from gcame.saliency import explain_detection
    from gcame.toy_detector import DetectorConfig, LevelSpec, build_blob_detector

    cfg = DetectorConfig(input_h=64, input_w=64, levels=(LevelSpec(8, 64),))
    detector = build_blob_detector(cfg)
    image = background_image(64, 64)
    add_cell_square(image, cfg, 3, 4, 0)
    dets, cache = detector.forward(image)
    t = best_of(lambda: explain_detection(detector, cache, dets[0]), args.repeats)
    print(f"{'explain (K=64, backend=' + backend_name() + ')':<34} {t * 1e3:9.3f} ms")


if __name__ == "__main__":
    main()
