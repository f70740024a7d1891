"""Acceptance criteria, one test each, at their stated tolerances.

Every test records a single ``PASS``/``FAIL`` line (printed in the pytest
terminal summary and to stdout) before asserting, so a failing criterion
still reports its measured values.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from voxreg import _backend
from voxreg.core import FLAG_BIT, GridConfig, PointCloud, encode_index
from voxreg.dilation import tagged_voxels
from voxreg.icp import IcpConfig, estimate_transform, register, register_brute, register_kdtree
from voxreg.ingest import PerturbationSpec, gen_synthetic, perturb
from voxreg.memmodel import MB, account, static_bytes
from voxreg.nns import KDTree, Route, brute_force_nn, kdtree_nn, search_grid
from voxreg.voxelgrid import allocate_arena, build_grid, build_histogram, compute_offsets, scatter_points


def record(num, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2}: {title}" + (f" | {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ------------------------------------------------------------ oracles

def oracle_voxel(p, n_bits):
    """Per-point quantize + pack with plain integer math."""
    n = 1 << n_bits
    cells = []
    for c in p:
        v = math.floor((float(c) + 1.0) / 2.0 * n)
        cells.append(min(max(v, 0), n - 1))
    return (cells[0] << (2 * n_bits)) | (cells[1] << n_bits) | cells[2]


@pytest.fixture(scope="module")
def corpus():
    """100 seeded clouds of up to 10k points, N cycling through 2..5."""
    out = []
    for s in range(100):
        rng = np.random.default_rng(500 + s)
        m = int(rng.integers(0, 10_001))
        style = s % 4
        if style == 0:
            pts = rng.uniform(-1, 1, size=(m, 3))
        elif style == 1:
            pts = np.clip(rng.normal(scale=0.3, size=(m, 3)), -1, 1)
        elif style == 2:
            pts = gen_synthetic("two-density-cluster", m, s).points if m else np.zeros((0, 3))
        else:
            pts = rng.choice(np.linspace(-1, 1, 9), size=(m, 3))    # exact cell boundaries
        n_bits = 2 + s % 4
        vox = [oracle_voxel(p, n_bits) for p in pts]
        out.append((PointCloud(pts), GridConfig(n_bits), vox))
    return out


# ------------------------------------------------------------ criteria

def test_criterion_01_memory_saving():
    cfg = GridConfig(4)
    parts, elapsed = [], 0.0
    ok = True
    for m in (10_000, 40_000, 226_000):
        cloud = gen_synthetic("box-volume", m, 1)
        t0 = time.perf_counter()
        rep = account(compute_offsets(build_histogram(cloud, cfg)), cfg, 65536)
        elapsed += time.perf_counter() - t0
        ok &= rep.saving_ratio >= 0.97
        parts.append(f"{m // 1000}k: {100 * rep.saving_ratio:.3f}% ({rep.ours_mb:.3f} MB)")
    ok &= elapsed < 1.0
    record(1, "memory saving >= 97% vs 64 KiB/voxel", ok, ", ".join(parts) + f"; {elapsed * 1e3:.1f} ms")


def test_criterion_02_static_footprint():
    b = static_bytes(GridConfig(4))
    record(2, "static footprint N=4", b == 32768 and b / MB == 0.03125, f"{b} B = {b / MB} MB")


def test_criterion_03_table_replay():
    offs = compute_offsets(np.zeros(4096, dtype=np.uint32))
    results = []
    for ours, base, pct in ((0.135, 10, 98.6), (0.307, 75, 99.6), (1.39, 1508, 99.9)):
        got = 100 * account(offs, GridConfig(4), baseline_mb=base, ours_mb=ours).saving_ratio
        results.append((got, pct))
    ok = all(abs(g - p) <= 0.1 for g, p in results)
    record(3, "reference ratio replay within 0.1 pp", ok,
           ", ".join(f"{g:.2f}% (want {p}%)" for g, p in results))


def test_criterion_04_histogram_oracle(corpus):
    t0 = time.perf_counter()
    bad = 0
    for cloud, cfg, vox in corpus:
        counts = [0] * cfg.voxel_count
        for v in vox:
            counts[v] += 1
        expected = np.array(counts)
        for name in _backend.available_backends():
            with _backend.use_backend(name):
                for lanes in (1, 4):
                    got = build_histogram(cloud, cfg, "parallel", lanes)
                    bad += not np.array_equal(got, expected)
    elapsed = time.perf_counter() - t0
    record(4, "parallel histogram == serial counting oracle", bad == 0 and elapsed < 30,
           f"100 clouds x {len(_backend.available_backends())} backends x 2 lane counts, "
           f"{bad} mismatches, {elapsed:.2f} s")


def test_criterion_05_offsets(corpus):
    bad = 0
    for cloud, cfg, vox in corpus:
        counts = [0] * cfg.voxel_count
        for v in vox:
            counts[v] += 1
        offs = compute_offsets(build_histogram(cloud, cfg, "parallel"))
        o = offs.offsets.tolist()
        seg = [2 if c == 0 else c + 2 for c in counts]
        ok = o[0] == 0
        ok &= all(o[i + 1] - o[i] == seg[i] and o[i + 1] > o[i] for i in range(len(o) - 1))
        ok &= offs.total_slots == o[-1] + seg[-1]
        bad += not ok
    record(5, "offset invariants on every voxel", bad == 0, f"100 clouds, {bad} violations")


def test_criterion_06_scatter(corpus):
    bad = 0
    for cloud, cfg, vox in corpus:
        sets = []
        for mode in ("serial", "parallel"):
            hist = build_histogram(cloud, cfg)
            offs = compute_offsets(hist)
            arena = allocate_arena(offs)
            scatter_points(cloud, offs, arena, cfg, mode, lanes=4)
            stored, per_voxel = [], {}
            for v in np.flatnonzero(hist):
                idx = arena.point_indices(offs, int(v)).tolist()
                stored.extend(idx)
                per_voxel[int(v)] = sorted(idx)
                bad += any(vox[i] != v for i in idx)
            bad += sorted(stored) != list(range(len(cloud)))
            bad += bool(arena.lock_words(offs).any())
            sets.append(per_voxel)
        bad += sets[0] != sets[1]
    record(6, "scatter completeness, serial == parallel sets", bad == 0, f"100 clouds, {bad} violations")


def test_criterion_07_dilation_geometry():
    cfg0 = GridConfig(4)
    center = (8, 8, 8)
    root = encode_index(*center, cfg0)
    edge = cfg0.voxel_edge
    p = [[(c + 0.5) * edge - 1.0 for c in center]]
    n = cfg0.cells_per_axis
    checks = []
    for layers in (1, 2, 3):
        ball = {encode_index(x, y, z, cfg0) for x in range(n) for y in range(n) for z in range(n)
                if 0 < abs(x - 8) + abs(y - 8) + abs(z - 8) <= layers}
        for mode in ("serial", "parallel"):
            grid = build_grid(PointCloud(p), GridConfig(4, layers), mode, lanes=4)
            tags = tagged_voxels(grid.arena, grid.offsets)
            states = grid.arena.state_words(grid.offsets)
            single_hop = all(1 <= states[r] < FLAG_BIT for r in tags.values())
            checks.append((layers, mode, set(tags) == ball and set(tags.values()) == {root} and single_hop,
                           len(tags), len(ball)))
    ok = all(c[2] for c in checks)
    record(7, "tagged set == clipped Manhattan ball, single-hop roots", ok,
           ", ".join(f"L={c[0]} {c[1]}: {c[3]}/{c[4]}" for c in checks))


def test_criterion_08_nns_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(88)
    target = gen_synthetic("two-density-cluster", 10_000, 88)
    queries = rng.uniform(-1, 1, size=(10_000, 3))
    grid = build_grid(target, GridConfig(4, 2))
    got = search_grid(queries, grid)
    states = grid.arena.state_words(grid.offsets)
    pts = target.points
    cand_bad = fb_bad = kd_bad = 0
    for i, q in enumerate(queries):
        v = oracle_voxel(q, 4)
        s = int(states[v])
        route = Route.LOCAL
        if s & FLAG_BIT:
            v = s & (FLAG_BIT - 1)
            s, route = int(states[v]), Route.REDIRECTED
        cand = np.arange(len(pts)) if s == 0 else np.sort(grid.arena.point_indices(grid.offsets, v).astype(np.int64))
        if s == 0:
            route = Route.GLOBAL_FALLBACK
        d = pts[cand] - q
        d = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        j = int(np.argmin(d))
        cand_bad += (got.index[i], got.dist_sq[i], got.route[i]) != (cand[j], d[j], route)
        if got.route[i] == Route.GLOBAL_FALLBACK:
            r = brute_force_nn(q, target)
            fb_bad += (r.best_index, r.best_dist_sq) != (got.index[i], got.dist_sq[i])
    tree = KDTree(target)
    for q in queries:
        a, b = kdtree_nn(q, tree), brute_force_nn(q, target)
        kd_bad += (a.best_index, a.best_dist_sq) != (b.best_index, b.best_dist_sq)
    elapsed = time.perf_counter() - t0
    counts = got.route_counts()
    record(8, "NNS candidate-set, fallback and kd-tree exactness",
           cand_bad == fb_bad == kd_bad == 0 and elapsed < 60,
           f"routes {counts}; mismatches cand={cand_bad} fallback={fb_bad} kd={kd_bad}; {elapsed:.1f} s")


def test_criterion_09_transform_recovery():
    rng = np.random.default_rng(99)
    worst, dets = 0.0, []
    mirrored_dets = []
    for k in range(200):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0, np.pi)
        kx = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        rot = np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * kx @ kx
        dirn = rng.normal(size=3)
        t = dirn / np.linalg.norm(dirn) * rng.uniform(0, 1)
        src = rng.uniform(-1, 1, size=(int(rng.integers(3, 200)), 3))
        if k < 20:                                   # coplanar, rank-2 covariance
            src[:, 2] = 0.0
            q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
            src = src @ q.T                          # tilt the plane
            m = estimate_transform(src, src * [1, 1, -1] @ rot.T + t)
            mirrored_dets.append(np.linalg.det(m.rotation))
        dst = src @ rot.T + t
        est = estimate_transform(src, dst)
        worst = max(worst, float(np.abs(est.apply(src) - dst).max()))
        dets.append(np.linalg.det(est.rotation))
    dets = np.array(dets + mirrored_dets)
    ok = worst < 1e-9 and np.all(np.abs(dets - 1) <= 1e-9)
    record(9, "estimate_transform recovery, det(R) = +1", ok,
           f"200 instances (20 coplanar, +20 mirrored coplanar), max residual {worst:.2e}, "
           f"max |det-1| {np.abs(dets - 1).max():.1e}")


def _instance(n, s):
    target = gen_synthetic("two-density-cluster", n, 1000 + s)
    source = gen_synthetic("two-density-cluster", n, 2000 + s)
    return perturb(source, PerturbationSpec(25, 0.1, s))[0], target


@pytest.mark.slow
def test_criterion_10_end_to_end():
    t0 = time.perf_counter()
    cfg = IcpConfig()
    failures, ratios, iters = [], [], []
    for n in (10_000, 40_000):
        for s in range(10):
            source, target = _instance(n, s)
            _, trace = register(source, target, cfg)
            # exact oracle: brute force scan at 10k, the (bit-identical) kd-tree at 40k
            _, oracle = (register_brute if n == 10_000 else register_kdtree)(source, target, cfg)
            ratio = trace.final_rmse / oracle.final_rmse
            ratios.append(ratio)
            iters.append(trace.iterations)
            if not (trace.converged and trace.iterations <= 50 and ratio <= 5):
                failures.append((n, s, trace.converged, trace.iterations, ratio))
    # the two exact oracles agree on a 10k instance
    source, target = _instance(10_000, 0)
    _, a = register_brute(source, target, cfg)
    _, b = register_kdtree(source, target, cfg)
    oracle_same = [r.rmse for r in a.records] == [r.rmse for r in b.records]

    # L=0 with every query in an empty voxel: a small target cluster, a source shell around it
    target = PointCloud(gen_synthetic("box-volume", 2000, 3).points * 0.25)
    source = perturb(PointCloud(gen_synthetic("sphere-surface", 1000, 4).points * 1.5),
                     PerturbationSpec(25, 0.1, 3))[0]
    cfg0 = IcpConfig(GridConfig(4, 0))
    ta, tr = register(source, target, cfg0)
    tb, _ = register_brute(source, target, cfg0)
    all_fb = tr.route_totals()["global-fallback"] == len(source) * tr.iterations
    fb_diff = float(np.abs(ta.as_matrix() - tb.as_matrix()).max())
    elapsed = time.perf_counter() - t0
    ok = not failures and oracle_same and all_fb and fb_diff <= 1e-9
    record(10, "20 instances converge, RMSE <= 5x oracle; L=0 fallback == brute", ok,
           f"iters {min(iters)}..{max(iters)}, ratio {min(ratios):.3f}..{max(ratios):.3f}, "
           f"failures {failures}; all-fallback={all_fb} diff={fb_diff:.1e}; {elapsed:.0f} s"
           + ("" if elapsed < 300 else " (over 5 min desk target)"))


def test_criterion_11_moc_timing():
    cfg = GridConfig(4)
    cloud = gen_synthetic("box-volume", 250_000, 11)
    hist = build_histogram(cloud, cfg)
    best = float("inf")
    for _ in range(20):
        h = hist.copy()
        t0 = time.perf_counter()
        offs = compute_offsets(h, in_place=True)
        best = min(best, time.perf_counter() - t0)
    assert offs.total_slots == 250_000 + 2 * 4096
    ms = best * 1e3
    # soft criterion: slower hardware is reported, not failed
    line = f"compute_offsets 250k pts N=4: {ms:.3f} ms ({_backend.active_backend()} backend)"
    if ms >= 2.0:
        line += " - slower than 2 ms, reported only"
    record(11, "MOC timing < 2 ms (soft)", True, line)


@pytest.mark.slow
def test_criterion_12_method_ratio():
    source, target = _instance(40_000, 0)
    cfg = IcpConfig()
    t0 = time.perf_counter()
    _, dil = register(source, target, cfg)
    dil_wall = time.perf_counter() - t0
    # brute force gets a short capped run; its per-iteration cost is flat
    capped = IcpConfig(max_iterations=3, rmse_delta_threshold=1e-12)
    t0 = time.perf_counter()
    _, bru = register_brute(source, target, capped)
    bru_wall = time.perf_counter() - t0
    dil_per, bru_per = dil_wall / dil.iterations, bru_wall / bru.iterations
    speedup = bru_per / dil_per
    record(12, "dilation-icp faster than brute-icp at 40k (per iteration, grid build included)",
           speedup > 1.0,
           f"dilation {dil_per * 1e3:.0f} ms/iter over {dil.iterations} iters, "
           f"brute {bru_per * 1e3:.0f} ms/iter, speedup {speedup:.1f}x")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
