"""Point-to-point ICP driven by pluggable correspondence search."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .core import GridConfig, InputError, PointCloud, RigidTransform
from .nns import KDTree, NnBatch, brute_force_all, search_grid
from .voxelgrid import VoxelGrid, build_grid

DEGENERACY_RTOL = 1e-10


@dataclass(frozen=True)
class IcpConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    max_iterations: int = 50
    rmse_delta_threshold: float = 1e-5
    # int k: tags are honored for the first k iterations only
    dilation_warmup_iters: int | str = "all"

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InputError("max_iterations must be >= 1")
        if not self.rmse_delta_threshold > 0:
            raise InputError("rmse_delta_threshold must be > 0")
        w = self.dilation_warmup_iters
        if w != "all" and (not isinstance(w, int) or w < 0):
            raise InputError("dilation_warmup_iters must be 'all' or a non-negative int")


@dataclass
class IterationRecord:
    iteration: int
    rmse: float
    local: int
    redirected: int
    global_fallback: int
    elapsed_s: float


@dataclass
class IcpTrace:
    records: list[IterationRecord] = field(default_factory=list)
    transform: RigidTransform = field(default_factory=RigidTransform.identity)
    converged: bool = False
    nns_seconds: float = 0.0
    estimate_seconds: float = 0.0
    grid_seconds: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def final_rmse(self) -> float:
        return self.records[-1].rmse if self.records else float("nan")

    def route_totals(self) -> dict[str, int]:
        return {
            "local": sum(r.local for r in self.records),
            "redirected": sum(r.redirected for r in self.records),
            "global-fallback": sum(r.global_fallback for r in self.records),
        }

    def to_csv(self, fh) -> None:
        fh.write("iteration,rmse,local,redirected,global_fallback,elapsed_s\n")
        for r in self.records:
            fh.write(f"{r.iteration},{r.rmse:.17g},{r.local},{r.redirected},"
                     f"{r.global_fallback},{r.elapsed_s:.6f}\n")


def _pairs(src_pts, dst_pts) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(src_pts, dtype=np.float64)
    q = np.asarray(dst_pts, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2 or p.shape[1] != 3:
        raise InputError(f"point lists must both be (m, 3); got {p.shape} and {q.shape}")
    return p, q


def estimate_transform(src_pts, dst_pts) -> RigidTransform:
    """Least-squares rigid (R, t) with R p + t ~ q (Kabsch/Umeyama).

    Sets ``degenerate`` when the cross-covariance has rank < 2 so the
    rotation is not unique; the returned transform is still a minimizer.
    """
    p, q = _pairs(src_pts, dst_pts)
    if p.shape[0] < 3:
        raise InputError(f"need at least 3 pairs, got {p.shape[0]}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise InputError("point lists contain non-finite values")
    cp = p.mean(axis=0)
    cq = q.mean(axis=0)
    h = (p - cp).T @ (q - cq)
    u, s, vt = np.linalg.svd(h)
    d = 1.0 if np.linalg.det(vt.T @ u.T) >= 0 else -1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    degenerate = bool(s[0] == 0.0 or s[1] <= DEGENERACY_RTOL * s[0])
    return RigidTransform(rot, cq - rot @ cp, degenerate=degenerate)


def rmse(src_pts, dst_pts) -> float:
    p, q = _pairs(src_pts, dst_pts)
    if p.shape[0] < 1:
        raise InputError("rmse needs at least one pair")
    return float(np.sqrt(np.mean(np.sum((p - q) ** 2, axis=1))))


class Matcher(Protocol):
    def match(self, points: np.ndarray, iteration: int) -> NnBatch: ...


class DilationMatcher:
    def __init__(self, grid: VoxelGrid, cfg: IcpConfig, mode: str = "serial", lanes: int | None = None):
        self.grid = grid
        self.cfg = cfg
        self.mode = mode
        self.lanes = lanes

    def match(self, points, iteration):
        w = self.cfg.dilation_warmup_iters
        use_tags = w == "all" or iteration <= w
        return search_grid(points, self.grid, self.mode, self.lanes, use_tags=use_tags)


class BruteMatcher:
    def __init__(self, target: PointCloud, lanes: int | None = None):
        self.target = target
        self.lanes = lanes

    def match(self, points, iteration):
        return brute_force_all(points, self.target, self.lanes)


class KdTreeMatcher:
    def __init__(self, target: PointCloud, lanes: int | None = None):
        self.tree = KDTree(target.points)
        self.lanes = lanes

    def match(self, points, iteration):
        return self.tree.query_all(points, self.lanes)


def run_icp(source: PointCloud, target: PointCloud, cfg: IcpConfig, matcher: Matcher,
            trace: IcpTrace | None = None) -> tuple[RigidTransform, IcpTrace]:
    """Iterate match -> estimate -> compose until the RMSE delta is small.

    The recorded RMSE is the residual of the current correspondences after
    the incremental update, and it is the same number the stop test uses.
    """
    if len(source) == 0 or len(target) == 0:
        raise InputError("source and target must be non-empty")
    trace = trace or IcpTrace()
    cum = RigidTransform.identity()
    src = source.points
    tgt = target.points
    prev = None
    t_start = time.perf_counter()
    for it in range(1, cfg.max_iterations + 1):
        cur = cum.apply(src)
        t0 = time.perf_counter()
        nn = matcher.match(cur, it)
        t1 = time.perf_counter()
        matched = tgt[nn.index]
        inc = estimate_transform(cur, matched)
        cum = inc.compose(cum)
        if cum.orthonormality_error() > 1e-9:
            cum = cum.reorthonormalized()
        err = rmse(inc.apply(cur), matched)
        t2 = time.perf_counter()
        trace.nns_seconds += t1 - t0
        trace.estimate_seconds += t2 - t1
        routes = nn.route_counts()
        trace.records.append(IterationRecord(
            it, err, routes["local"], routes["redirected"], routes["global-fallback"],
            time.perf_counter() - t_start))
        if prev is not None and abs(prev - err) < cfg.rmse_delta_threshold:
            trace.converged = True
            break
        prev = err
    trace.transform = cum
    return cum, trace


def register(source: PointCloud, target: PointCloud, cfg: IcpConfig | None = None,
             mode: str = "serial", lanes: int | None = None) -> tuple[RigidTransform, IcpTrace]:
    """Dilation-based ICP: the target grid is built once, then reused."""
    cfg = cfg or IcpConfig()
    if len(source) == 0 or len(target) == 0:
        raise InputError("source and target must be non-empty")
    grid = build_grid(target, cfg.grid, mode, lanes)
    trace = IcpTrace(grid_seconds=dict(grid.stage_seconds))
    return run_icp(source, target, cfg, DilationMatcher(grid, cfg, mode, lanes), trace)


def register_brute(source, target, cfg: IcpConfig | None = None, lanes: int | None = None):
    return run_icp(source, target, cfg or IcpConfig(), BruteMatcher(target, lanes))


def register_kdtree(source, target, cfg: IcpConfig | None = None, lanes: int | None = None):
    return run_icp(source, target, cfg or IcpConfig(), KdTreeMatcher(target, lanes))
