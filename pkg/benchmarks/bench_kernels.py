#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs each kernel pair on identical inputs and reports median wall time and
speedup, then times an end-to-end render under the active backend. The
process-wide backend is chosen at import (FLOWTRACE_BACKEND); the per-kernel
comparison below calls both twins directly, so one run covers both paths.

Usage: python benchmarks/bench_kernels.py [--size N] [--repeats R]
"""

import argparse
import time

import numpy as np

from flowtrace import _backend, flow as flowmod, geom, rng, tensorgrid


def _timeit(fn, repeats):
    fn()  # warm-up (JIT compile on the numba path)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_philox(n, repeats):
    r = np.random.default_rng(0)
    ctr = r.integers(0, 2**32, size=(n, 4), dtype=np.uint32)
    key = r.integers(0, 2**32, size=(n, 2), dtype=np.uint32)
    return (
        _timeit(lambda: rng._philox_blocks_numpy(ctr, key), repeats),
        _timeit(lambda: rng._philox_blocks_numba(ctr, key), repeats),
    )


def bench_trace(n, repeats):
    r = np.random.default_rng(1)
    sc = r.uniform(-2, 2, (6, 3))
    sr = r.uniform(0.2, 1.0, 6)
    pp = np.array([[0.0, 0.0, -2.0]])
    pn = np.array([[0.0, 0.0, 1.0]])
    orig = r.uniform(-4, 4, (n, 3))
    dirs = geom.normalize(r.normal(size=(n, 3)))
    args = (orig, dirs, 0.0, np.inf, sc, sr, pp, pn, False)
    return (
        _timeit(lambda: geom._trace_numpy(*args), repeats),
        _timeit(lambda: geom._trace_numba(*args), repeats),
    )


def bench_pwquad(n, repeats):
    r = np.random.default_rng(2)
    bins, _ = flowmod.bins_from_raw(r.normal(0, 0.8, size=(n, 65)))
    x = r.uniform(0.001, 0.999, n)

    def np_path():
        b, alpha, wb = flowmod._locate(bins.W, x)
        masses = 0.5 * (bins.V[:, :-1] + bins.V[:, 1:]) * bins.W
        cum = np.concatenate([np.zeros((n, 1)), np.cumsum(masses, axis=1)], axis=1)
        lo = np.take_along_axis(cum, b[:, None], axis=1)[:, 0]
        v0 = np.take_along_axis(bins.V, b[:, None], axis=1)[:, 0]
        v1 = np.take_along_axis(bins.V, b[:, None] + 1, axis=1)[:, 0]
        return lo + 0.5 * alpha * wb * ((2 - alpha) * v0 + alpha * v1)

    return (
        _timeit(np_path, repeats),
        _timeit(lambda: flowmod._pwquad_eval_numba(bins.W, bins.V, x, True), repeats),
    )


def bench_grid(n, repeats):
    r = np.random.default_rng(3)
    grid = tensorgrid.VMGrid.create(8, 32, [-1, -1, -1], [1, 1, 1], 0.1, r)
    x = r.uniform(-1, 1, (n, 3))
    i0, frac = grid._grid_coords(x)
    out = np.empty((n, grid.feature_dim))

    def nb_path():
        for a in range(3):
            b, c = tensorgrid._PLANES[a]
            tensorgrid._query_axis_numba(
                grid.vectors[a], grid.matrices[a],
                i0[:, a], frac[:, a], i0[:, b], frac[:, b], i0[:, c], frac[:, c],
                out[:, a * 8 : (a + 1) * 8],
            )

    return (
        _timeit(lambda: tensorgrid._query_numpy(grid, i0, frac), repeats),
        _timeit(nb_path, repeats),
    )


def bench_end_to_end(repeats):
    from flowtrace import estimator as est, render, scene as scn, train as tr

    text = """
[scene]
seed = 1
[envmap]
constant = 1 1 1
[material m]
albedo = 0.6 0.5 0.4
metallic = 0.5
roughness = 0.3
[sphere s]
center = 0 0 0
radius = 1
material = m
[camera c]
position = 0 -3 0.5
look_at = 0 0 0
vfov = 40
width = 64
height = 64
"""
    cfg = scn.parse_scene_text(text)
    model = tr.Model(cfg)
    cfg_s = est.SamplerConfig(specular="ggx", diffuse="cosine", n_s=32, n_d_cos=32)
    return _timeit(
        lambda: render.render_camera(model, cfg.cameras[0], cfg_s, seed=1), repeats
    )


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=200_000)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    if not _backend.HAS_NUMBA:
        print("numba not installed: only the numpy fallback path is available")
        return

    print(f"active backend: {_backend.BACKEND}; kernel twins compared directly")
    print(f"{'kernel':<16} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, fn in (
        ("philox", bench_philox),
        ("ray-trace", bench_trace),
        ("pwquad-cdf", bench_pwquad),
        ("vm-grid", bench_grid),
    ):
        t_np, t_nb = fn(args.size, args.repeats)
        print(f"{name:<16} {t_np*1e3:>8.2f}ms {t_nb*1e3:>8.2f}ms {t_np/t_nb:>7.2f}x")
    t = bench_end_to_end(max(2, args.repeats // 2))
    print(f"\nend-to-end 64x64 render ({_backend.BACKEND} backend): {t*1e3:.1f} ms")
    print("rerun with FLOWTRACE_BACKEND=numpy to time the fallback end to end")


if __name__ == "__main__":
    main()
