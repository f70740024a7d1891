"""Nearest-neighbor search over the dilated voxel arena, plus exact baselines.

All searches compare squared Euclidean distances computed as
``dx*dx + dy*dy + dz*dz`` and break ties toward the smallest point index,
so the arena search, the brute-force scan and the kd-tree agree bit for
bit whenever they see the same candidate set.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _backend
from .core import GridConfig, InputError, PointCloud, voxel_indices
from .voxelgrid import AddrOffsets, VoxelArena, VoxelGrid, _check_mode, _lanes


class Route(enum.IntEnum):
    LOCAL = 0
    REDIRECTED = 1
    GLOBAL_FALLBACK = 2

    @property
    def label(self) -> str:
        return ("local", "redirected", "global-fallback")[self.value]


@dataclass(frozen=True)
class NnResult:
    best_index: int
    best_dist_sq: float
    route: Route = Route.GLOBAL_FALLBACK


@dataclass
class NnBatch:
    index: np.ndarray
    dist_sq: np.ndarray
    route: np.ndarray  # uint8 Route values

    def __len__(self) -> int:
        return self.index.size

    def __getitem__(self, i: int) -> NnResult:
        return NnResult(int(self.index[i]), float(self.dist_sq[i]), Route(int(self.route[i])))

    def route_counts(self) -> dict[str, int]:
        counts = np.bincount(self.route, minlength=3)
        return {r.label: int(counts[r]) for r in Route}


def _as_queries(points) -> np.ndarray:
    q = np.ascontiguousarray(points, dtype=np.float64)
    if q.ndim == 1:
        q = q.reshape(1, 3)
    if q.shape[-1] != 3 or not np.all(np.isfinite(q)):
        raise InputError("queries must be finite (m, 3) points")
    return q


def _target_array(target) -> np.ndarray:
    pts = target.points if isinstance(target, PointCloud) else np.ascontiguousarray(target, dtype=np.float64)
    if pts.shape[0] == 0:
        raise InputError("target cloud is empty")
    return pts


def search_all(source, arena: VoxelArena, offs: AddrOffsets, cfg: GridConfig, target,
               mode: str = "serial", lanes: int | None = None, use_tags: bool = True) -> NnBatch:
    """Resolve every source point's voxel (redirecting once through a tag)
    and search it; empty resolutions fall back to the whole target."""
    _check_mode(mode)
    tgt = _target_array(target)
    q = _as_queries(source.points if isinstance(source, PointCloud) else source)
    vidx = voxel_indices(q, cfg)
    n_lanes = 1 if mode == "serial" else _lanes(lanes)
    idx, dist, route = _backend.kernels().search_batch(
        vidx, q, arena.slots, offs.offsets, tgt, bool(use_tags), n_lanes)
    return NnBatch(idx, dist, route)


def search(query, arena: VoxelArena, offs: AddrOffsets, cfg: GridConfig, target,
           use_tags: bool = True) -> NnResult:
    return search_all(_as_queries(query), arena, offs, cfg, target, "serial", 1, use_tags)[0]


def search_grid(source, grid: VoxelGrid, mode: str = "serial", lanes: int | None = None,
                use_tags: bool = True) -> NnBatch:
    return search_all(source, grid.arena, grid.offsets, grid.cfg, grid.target, mode, lanes, use_tags)


def brute_force_all(queries, target, lanes: int | None = None) -> NnBatch:
    tgt = _target_array(target)
    q = _as_queries(queries)
    idx, dist = _backend.kernels().brute_batch(q, tgt, _lanes(lanes) if lanes else 1)
    return NnBatch(idx, dist, np.full(idx.size, Route.GLOBAL_FALLBACK, dtype=np.uint8))


def brute_force_nn(query, target) -> NnResult:
    tgt = _target_array(target)
    q = _as_queries(query)[0]
    d = (q[0] - tgt[:, 0]) ** 2
    d = d + (q[1] - tgt[:, 1]) ** 2
    d = d + (q[2] - tgt[:, 2]) ** 2
    i = int(np.argmin(d))
    return NnResult(i, float(d[i]))


class KDTree:
    """Median-split 3-d tree with exact, tie-stable nearest-neighbor queries.

    Nodes live in flat arrays. Internal nodes split ``perm[lo:hi]`` at the
    median along the axis of widest spread; leaves hold up to ``leaf_size``
    points.
    """

    def __init__(self, points, leaf_size: int = 16):
        pts = _target_array(points)
        self.points = pts
        self.leaf_size = max(1, int(leaf_size))
        self.perm = np.arange(pts.shape[0], dtype=np.int64)
        split_dim, split_val, left, right, lo, hi = [], [], [], [], [], []

        def new_node(a, b):
            split_dim.append(0)
            split_val.append(0.0)
            left.append(-1)
            right.append(-1)
            lo.append(a)
            hi.append(b)
            return len(lo) - 1

        stack = [new_node(0, pts.shape[0])]
        while stack:
            node = stack.pop()
            a, b = lo[node], hi[node]
            if b - a <= self.leaf_size:
                continue
            sub = self.perm[a:b]
            coords = pts[sub]
            dim = int(np.argmax(coords.max(axis=0) - coords.min(axis=0)))
            mid = (a + b) // 2
            order = np.argpartition(coords[:, dim], mid - a)
            self.perm[a:b] = sub[order]
            split_dim[node] = dim
            split_val[node] = float(pts[self.perm[mid], dim])
            left[node] = new_node(a, mid)
            right[node] = new_node(mid, b)
            stack.extend((left[node], right[node]))

        self.split_dim = np.array(split_dim, dtype=np.int32)
        self.split_val = np.array(split_val, dtype=np.float64)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.lo = np.array(lo, dtype=np.int64)
        self.hi = np.array(hi, dtype=np.int64)

    def _arrays(self):
        return (self.points, self.perm, self.split_dim, self.split_val,
                self.left, self.right, self.lo, self.hi)

    def query_all(self, queries, lanes: int | None = None) -> NnBatch:
        q = _as_queries(queries)
        idx, dist = _backend.kernels().kd_query_batch(q, *self._arrays(), _lanes(lanes) if lanes else 1)
        return NnBatch(idx, dist, np.full(idx.size, Route.GLOBAL_FALLBACK, dtype=np.uint8))

    def query(self, query) -> NnResult:
        i, d = _backend._fallback.kd_query_one(_as_queries(query)[0], *self._arrays())
        return NnResult(int(i), float(d))


def kdtree_nn(query, tree: KDTree) -> NnResult:
    return tree.query(query)
