import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxreg.core import ConsistencyError, GridConfig, InputError, PointCloud, quantize, encode_index, voxel_indices
from voxreg.ingest import gen_synthetic
from voxreg.voxelgrid import (
    AddrOffsets,
    allocate_arena,
    block_local_table,
    build_grid,
    build_histogram,
    compute_offsets,
    dump_arena_hex,
    scatter_points,
)

CFG4 = GridConfig(4)


def counting_oracle(cloud, cfg):
    counts = [0] * cfg.voxel_count
    for p in cloud.points:
        counts[encode_index(*quantize(p, cfg), cfg)] += 1
    return np.array(counts)


# -------------------------------------------------------------- histogram

@pytest.mark.parametrize("mode", ["serial", "parallel"])
def test_histogram_three_in_one_voxel(backend, mode):
    pc = PointCloud([[0.01, 0.01, 0.01], [0.02, 0.03, 0.04], [0.05, 0.05, 0.06]])
    hist = build_histogram(pc, CFG4, mode, lanes=2)
    v = encode_index(8, 8, 8, CFG4)
    assert hist[v] == 3 and hist.sum() == 3


@pytest.mark.parametrize("mode", ["serial", "parallel"])
def test_histogram_empty_cloud(backend, mode):
    hist = build_histogram(PointCloud(np.zeros((0, 3))), CFG4, mode)
    assert hist.shape == (4096,) and not hist.any()


@pytest.mark.parametrize("lanes", [1, 3])
def test_histogram_parallel_equals_oracle(backend, lanes):
    pc = PointCloud(np.random.default_rng(7).uniform(-1, 1, size=(1000, 3)))
    expected = counting_oracle(pc, CFG4)
    assert np.array_equal(build_histogram(pc, CFG4, "parallel", lanes), expected)
    assert np.array_equal(build_histogram(pc, CFG4, "serial"), expected)


def test_histogram_bad_mode():
    with pytest.raises(InputError):
        build_histogram(PointCloud(np.zeros((1, 3))), CFG4, "gpu")


def test_block_table_fused_entries_and_probing():
    table = block_local_table([5, 5, 261], 256)
    assert table[5] == (5 << 16) | 2
    assert table[6] == (261 << 16) | 1       # collided on key 5, probed forward
    assert np.count_nonzero(table) == 2


def test_block_table_voxel_zero_and_wraparound():
    table = block_local_table([0, 0, 256], 256)
    assert table[0] == 2                     # key 0, count 2
    assert table[1] == (256 << 16) | 1
    table = block_local_table([255, 511], 256)
    assert table[255] == (255 << 16) | 1
    assert table[0] == (511 << 16) | 1       # probe wraps through the mask


def test_block_table_flushes_saturated_entry():
    hist = np.zeros(4096, dtype=np.int64)
    table = block_local_table(np.full(70000, 3), 256, hist)
    assert hist[3] == 0xFFFF
    assert table[3] == (3 << 16) | (70000 - 0xFFFF)


def test_block_table_rejects_non_power_of_two():
    with pytest.raises(InputError):
        block_local_table([1], 100)


def test_blocked_histogram_handles_dense_voxel(backend):
    # one voxel far past the 16-bit value field
    pc = PointCloud(np.full((70000, 3), 0.3))
    hist = build_histogram(pc, CFG4, "parallel", lanes=2, block_size=256)
    assert hist.sum() == 70000 and hist.max() == 70000


# ---------------------------------------------------------------- offsets

def test_offsets_hand_trace(backend):
    offs = compute_offsets(np.array([3, 0, 2], dtype=np.uint32))
    assert offs.offsets.tolist() == [0, 5, 7]
    assert offs.total_slots == 11
    assert [offs.segment_size(v) for v in range(3)] == [5, 2, 4]


def test_offsets_all_empty(backend):
    offs = compute_offsets(np.zeros(4096, dtype=np.uint32))
    assert offs.total_slots == 8192
    assert np.all(offs.segment_sizes() == 2)


def test_offsets_single_voxel(backend):
    hist = np.zeros(64, dtype=np.uint32)
    hist[17] = 9
    offs = compute_offsets(hist)
    assert offs.segment_size(17) == 11
    assert offs.total_slots == 63 * 2 + 11


def test_offsets_in_place(backend):
    hist = np.array([3, 0, 2], dtype=np.uint32)
    offs = compute_offsets(hist, in_place=True)
    assert offs.offsets is hist and hist.tolist() == [0, 5, 7]
    with pytest.raises(InputError):
        compute_offsets(np.array([1, 2], dtype=np.int64), in_place=True)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1000), min_size=1, max_size=300))
def test_offset_invariants(counts):
    hist = np.array(counts, dtype=np.uint32)
    offs = compute_offsets(hist)
    o = offs.offsets.astype(np.int64)
    assert o[0] == 0
    assert np.all(np.diff(o) > 0)
    seg = np.where(hist == 0, 2, hist.astype(np.int64) + 2)
    assert np.array_equal(np.diff(o), seg[:-1])
    assert offs.total_slots == o[-1] + seg[-1]


# ------------------------------------------------------------------ arena

def test_allocate_arena_sizes():
    arena = allocate_arena(AddrOffsets(np.array([0, 5, 7], dtype=np.uint32), 11))
    assert arena.slots.size == 11 and arena.nbytes == 44 and not arena.slots.any()
    arena = allocate_arena(compute_offsets(np.zeros(4096, dtype=np.uint32)))
    assert arena.nbytes == 32 * 1024
    with pytest.raises(InputError):
        allocate_arena(AddrOffsets(np.zeros(0, dtype=np.uint32), 0))


def test_tum_scale_arena_order_of_magnitude():
    pc = PointCloud(np.random.default_rng(0).uniform(-0.57, 0.57, size=(226_000, 3)))
    offs = compute_offsets(build_histogram(pc, CFG4))
    assert offs.total_slots == 226_000 + 2 * 4096
    mb = offs.total_slots * 4 / 2**20
    assert 1.39 / 2 <= mb <= 1.39 * 2


# ---------------------------------------------------------------- scatter

def _grid(pc, mode="serial", lanes=2):
    hist = build_histogram(pc, CFG4)
    offs = compute_offsets(hist)
    arena = allocate_arena(offs)
    scatter_points(pc, offs, arena, CFG4, mode, lanes)
    return hist, offs, arena


@pytest.mark.parametrize("mode", ["serial", "parallel"])
def test_scatter_single_point(backend, mode):
    _, offs, arena = _grid(PointCloud([[0.0, 0.0, 0.0]]), mode)
    assert arena.segment(offs, 2184).tolist() == [0, 1, 0]
    assert arena.slots.sum() == 1


@pytest.mark.parametrize("mode", ["serial", "parallel"])
def test_scatter_empty_cloud(backend, mode):
    _, offs, arena = _grid(PointCloud(np.zeros((0, 3))), mode)
    assert not arena.slots.any()


def test_scatter_serial_parallel_same_sets(backend):
    pc = gen_synthetic("two-density-cluster", 10_000, 4)
    hist, offs_s, arena_s = _grid(pc, "serial")
    _, offs_p, arena_p = _grid(pc, "parallel", lanes=4)
    vidx = voxel_indices(pc.points, CFG4)
    for v in np.flatnonzero(hist):
        s = arena_s.point_indices(offs_s, v)
        p = arena_p.point_indices(offs_p, v)
        assert len(s) == hist[v]
        assert np.all(np.diff(s.astype(np.int64)) > 0)      # serial keeps ascending order
        assert np.array_equal(np.sort(p), s)
        assert np.all(vidx[s] == v)
    assert not arena_p.lock_words(offs_p).any()


def test_scatter_detects_mismatched_offsets(backend):
    pc = PointCloud(np.zeros((4, 3)))
    other = PointCloud(np.zeros((2, 3)))
    offs = compute_offsets(build_histogram(other, CFG4))
    for mode in ("serial", "parallel"):
        with pytest.raises(ConsistencyError):
            scatter_points(pc, offs, allocate_arena(offs), CFG4, mode)


def test_build_grid_stage_times_and_dump(backend):
    pc = PointCloud([[0.0, 0.0, 0.0], [0.01, 0.0, 0.0], [-1.0, -1.0, -1.0]])
    grid = build_grid(pc, GridConfig(4, 0), dilate=False)
    assert set(grid.stage_seconds) == {"VOH", "MOC", "VDMA", "DDMA"}
    buf = io.StringIO()
    dump_arena_hex(grid, buf)
    assert buf.getvalue().splitlines() == [
        "# voxel offset lock state indices...",
        "000000 00000000 00000000 00000001 00000002",
        "000888 00001111 00000000 00000002 00000000 00000001",
    ]
