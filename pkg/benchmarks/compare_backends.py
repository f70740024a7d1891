"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/compare_backends.py [--points 40000] [--repeats 3]

Each stage runs on the same inputs under both backends; the best of
``--repeats`` wall times is reported along with the speedup.
"""

import argparse
import time

import numpy as np

from voxreg import _backend
from voxreg.core import GridConfig
from voxreg.ingest import gen_synthetic
from voxreg.nns import KDTree, brute_force_all, search_grid
from voxreg.voxelgrid import build_grid, build_histogram, compute_offsets


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=40_000)
    ap.add_argument("--queries", type=int, default=5_000)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--lanes", type=int, default=None)
    args = ap.parse_args(argv)

    backends = _backend.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the python backend is available")

    cfg = GridConfig(4, 10)
    cloud = gen_synthetic("two-density-cluster", args.points, 0)
    queries = np.random.default_rng(1).uniform(-1, 1, size=(args.queries, 3))
    hist = build_histogram(cloud, cfg)
    grid = build_grid(cloud, cfg)
    tree = KDTree(cloud)
    lanes = args.lanes or _backend.default_lanes()

    stages = {
        "histogram (serial)": lambda: build_histogram(cloud, cfg, "serial"),
        "histogram (blocked)": lambda: build_histogram(cloud, cfg, "parallel", lanes),
        "offsets": lambda: compute_offsets(hist.copy(), in_place=True),
        "grid build (serial)": lambda: build_grid(cloud, cfg, "serial"),
        "grid build (parallel)": lambda: build_grid(cloud, cfg, "parallel", lanes),
        "dilated search": lambda: search_grid(queries, grid),
        "brute force": lambda: brute_force_all(queries[:1000], cloud),
        "kd-tree query": lambda: tree.query_all(queries),
    }
    print(f"{args.points} points, {args.queries} queries, lanes={lanes}")
    print(f"{'stage':24s}" + "".join(f"{b:>14s}" for b in backends) + "     speedup")
    for name, fn in stages.items():
        times = {}
        for b in backends:
            with _backend.use_backend(b):
                times[b] = best_of(fn, args.repeats)
        row = f"{name:24s}" + "".join(f"{times[b] * 1e3:12.3f}ms" for b in backends)
        if len(times) == 2:
            row += f"  {times['python'] / times['compiled']:8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
