"""Voxel occupancy histogram, address offsets and the segmented arena.

Arena layout: every voxel ``v`` owns the slot range
``[offsets[v], offsets[v] + segment_size(v))`` of one uint32 array::

    offsets[v] + 0        lock word   (0 free, 1 held)
    offsets[v] + 1        state word  (point count, or flagged root index)
    offsets[v] + 2 ...    point indices into the target cloud

Empty voxels still get the two header slots so dilation can tag them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .core import (
    ConsistencyError,
    GridConfig,
    InputError,
    PointCloud,
    ResourceError,
    voxel_indices,
)

BLOCK_SIZE = 256
SLOT_BYTES = 4
MODES = ("serial", "parallel")


@dataclass
class AddrOffsets:
    offsets: np.ndarray  # uint32, one per voxel
    total_slots: int

    def segment_size(self, v: int) -> int:
        end = self.offsets[v + 1] if v + 1 < self.offsets.size else self.total_slots
        return int(end) - int(self.offsets[v])

    def segment_sizes(self) -> np.ndarray:
        ends = np.append(self.offsets[1:].astype(np.int64), self.total_slots)
        return ends - self.offsets.astype(np.int64)


@dataclass
class VoxelArena:
    slots: np.ndarray  # uint32

    @property
    def nbytes(self) -> int:
        return int(self.slots.size) * SLOT_BYTES

    def segment(self, offs: AddrOffsets, v: int) -> np.ndarray:
        start = int(offs.offsets[v])
        return self.slots[start:start + offs.segment_size(v)]

    def state_words(self, offs: AddrOffsets) -> np.ndarray:
        return self.slots[offs.offsets.astype(np.int64) + 1]

    def lock_words(self, offs: AddrOffsets) -> np.ndarray:
        return self.slots[offs.offsets.astype(np.int64)]

    def point_indices(self, offs: AddrOffsets, v: int) -> np.ndarray:
        start = int(offs.offsets[v])
        count = int(self.slots[start + 1])
        if count & (1 << 31):
            return np.empty(0, dtype=np.uint32)
        return self.slots[start + 2:start + 2 + count]


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}, got {mode!r}")


def _lanes(lanes: int | None) -> int:
    return _backend.default_lanes() if lanes is None else max(1, int(lanes))


def block_local_table(vidx, block_size: int = BLOCK_SIZE, global_hist: np.ndarray | None = None) -> np.ndarray:
    """Build one block's fused open-addressing table (key << 16 | count).

    Keys start at ``voxel & (block_size - 1)`` and probe linearly. An entry
    whose count reaches 0xFFFF is flushed into ``global_hist`` and reset.
    """
    if block_size & (block_size - 1):
        raise InputError("block_size must be a power of two")

    def flush(v, amount):
        if global_hist is None:
            raise OverflowError("entry saturated with no global histogram to flush to")
        global_hist[v] += amount

    return _backend._fallback.block_table(vidx, block_size, flush)


def build_histogram(cloud: PointCloud, cfg: GridConfig, mode: str = "serial",
                    lanes: int | None = None, block_size: int = BLOCK_SIZE) -> np.ndarray:
    """Points per voxel; ``parallel`` goes through block-local fused tables."""
    _check_mode(mode)
    vidx = voxel_indices(cloud.points, cfg)
    k = _backend.kernels()
    if mode == "serial":
        return k.voxel_histogram_serial(vidx, cfg.voxel_count)
    return k.voxel_histogram_blocked(vidx, cfg.voxel_count, block_size, _lanes(lanes))


def compute_offsets(hist: np.ndarray, in_place: bool = False) -> AddrOffsets:
    """Prefix-accumulate segment sizes (2 for empty voxels, count + 2 otherwise)."""
    counts = np.asarray(hist)
    if counts.ndim != 1 or counts.size == 0:
        raise InputError("histogram must be a non-empty 1-d array")
    if in_place:
        if counts.dtype != np.uint32 or not counts.flags.c_contiguous:
            raise InputError("in-place offsets need a contiguous uint32 histogram")
        buf = counts
    else:
        buf = np.ascontiguousarray(counts, dtype=np.uint32).copy()
    total = _backend.kernels().prefix_offsets_inplace(buf)
    if total < 0:
        raise ResourceError("arena would exceed 2**32 slots")
    return AddrOffsets(buf, int(total))


def allocate_arena(offs: AddrOffsets) -> VoxelArena:
    if offs.total_slots <= 0:
        raise InputError("total_slots must be positive")
    try:
        slots = np.zeros(offs.total_slots, dtype=np.uint32)
    except MemoryError as exc:
        raise ResourceError(f"cannot allocate {offs.total_slots} slots") from exc
    return VoxelArena(slots)


def scatter_points(cloud: PointCloud, offs: AddrOffsets, arena: VoxelArena, cfg: GridConfig,
                   mode: str = "serial", lanes: int | None = None) -> None:
    """Append each point's index to its voxel's segment under the voxel lock."""
    _check_mode(mode)
    if len(cloud) == 0:
        return
    if len(cloud) >= 1 << 31:
        raise InputError("point indices must fit in 31 bits")
    vidx = voxel_indices(cloud.points, cfg)
    k = _backend.kernels()
    if mode == "serial":
        status = k.scatter_serial(vidx, offs.offsets, offs.total_slots, arena.slots)
    else:
        status = k.scatter_parallel(vidx, offs.offsets, offs.total_slots, arena.slots, _lanes(lanes))
    if status:
        raise ConsistencyError("a voxel segment overflowed; offsets do not match this cloud")


STAGES = ("VOH", "MOC", "VDMA", "DDMA")


@dataclass
class VoxelGrid:
    """A target cloud voxelized, scattered and (optionally) dilated."""

    cfg: GridConfig
    target: PointCloud
    histogram: np.ndarray
    offsets: AddrOffsets
    arena: VoxelArena
    stage_seconds: dict = field(default_factory=dict)


def build_grid(target: PointCloud, cfg: GridConfig, mode: str = "serial",
               lanes: int | None = None, dilate: bool = True) -> VoxelGrid:
    """Run VOH -> MOC -> VDMA -> DDMA once for ``target``."""
    from .dilation import dilate as run_dilation

    times = {}
    t0 = time.perf_counter()
    hist = build_histogram(target, cfg, mode, lanes)
    t1 = time.perf_counter()
    offs = compute_offsets(hist)
    t2 = time.perf_counter()
    arena = allocate_arena(offs)
    scatter_points(target, offs, arena, cfg, mode, lanes)
    t3 = time.perf_counter()
    if dilate:
        run_dilation(arena, offs, cfg, mode, lanes)
    t4 = time.perf_counter()
    times.update(VOH=t1 - t0, MOC=t2 - t1, VDMA=t3 - t2, DDMA=t4 - t3)
    return VoxelGrid(cfg, target, hist, offs, arena, times)


def dump_arena_hex(grid: VoxelGrid, fh, include_empty: bool = False) -> None:
    """Hex listing, one line per voxel: ``voxel offset lock state [indices...]``."""
    offs = grid.offsets
    fh.write("# voxel offset lock state indices...\n")
    for v in range(offs.offsets.size):
        seg = grid.arena.segment(offs, v)
        if seg[1] == 0 and not include_empty:
            continue
        fh.write(f"{v:06x} {int(offs.offsets[v]):08x} "
                 + " ".join(f"{int(w):08x}" for w in seg) + "\n")
