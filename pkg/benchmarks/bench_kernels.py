#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python (NumPy) fallback.

Times the two hot paths on identical inputs and checks that both backends
produce the same results:

* decode_boxes: per-slot detection decode + hull reprojection, the inner
  loop of every loss evaluation.
* region_match_counts: spherical-sample region assignment, the inner loop
  of prior computation and coverage sweeps.

Usage: python benchmarks/bench_kernels.py [--slots N] [--points N] [--repeat K]
"""

import argparse
import time

import numpy as np

from arenatrack import codec as C
from arenatrack import geometry as G
from arenatrack._kernels import pyfallback
from arenatrack.priors import default_region_table

try:
    from arenatrack._kernels import _core
except ImportError:
    _core = None


def build_box_inputs(n_slots: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    table = default_region_table()
    config = C.CodecConfig()
    k = G.CameraIntrinsics(1.2, 416, 416)
    grid = config.grids_for(k)[1]
    params = C.anchor_params_for_head(table, 1, config)
    n_cells = max(1, n_slots // 6)
    raw = np.ascontiguousarray(rng.normal(0, 2.0, (n_cells * 6, 6)))
    hull = np.ascontiguousarray(G.object_corner_points(G.CuboidSpec(3.0, 1.6, 1.4)))
    # treat the synthetic slots as one wide grid row-block
    cols = grid.cols
    rows = (n_cells + cols - 1) // cols
    return (raw, rows, cols, 6, float(grid.stride_px), config.spread, params,
            k.focal_px, k.center[0], k.center[1], hull)


def build_region_inputs(n_points: int, seed: int = 1):
    rng = np.random.default_rng(seed)
    table = default_region_table()
    return (rng.uniform(0, 130, n_points), rng.uniform(-np.pi, np.pi, n_points),
            rng.uniform(0, 1.5, n_points), table.region_params())


def timed(fn, args, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--slots", type=int, default=21294,
                    help="decode_boxes slots (default: one 416x416 tensor set)")
    ap.add_argument("--points", type=int, default=2_000_000,
                    help="region assignment sample count")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    box_args = build_box_inputs(args.slots)
    region_args = build_region_inputs(args.points)

    rows = []
    for name, fn_boxes, fn_regions in (
        ("python", pyfallback.decode_boxes, pyfallback.region_match_counts),
        ("compiled", getattr(_core, "decode_boxes", None),
         getattr(_core, "region_match_counts", None)),
    ):
        if fn_boxes is None:
            print("compiled backend not built; showing python fallback only")
            continue
        rows.append((name,
                     timed(fn_boxes, box_args, args.repeat),
                     timed(fn_regions, region_args, args.repeat)))

    print(f"{'backend':<10} {'decode_boxes':>14} {'region_assign':>14}")
    for name, tb, tr in rows:
        print(f"{name:<10} {tb * 1e3:>11.2f} ms {tr * 1e3:>11.2f} ms")
    if len(rows) == 2:
        print(f"{'speedup':<10} {rows[0][1] / rows[1][1]:>13.1f}x "
              f"{rows[0][2] / rows[1][2]:>13.1f}x")
        pb, vb = pyfallback.decode_boxes(*box_args)
        cb, cv = _core.decode_boxes(*box_args)
        pr = pyfallback.region_match_counts(*region_args)
        cr = _core.region_match_counts(*region_args)
        assert np.array_equal(vb, cv) and np.allclose(pb, cb, atol=1e-9)
        assert np.array_equal(pr[0], cr[0]) and np.array_equal(pr[1], cr[1])
        print("backend results match")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
