"""Pure-Python/numpy implementations of the hot kernels.

Signatures mirror ``voxreg._kernels``. Serial kernels are vectorized with
numpy; parallel kernels run lanes on a thread pool and emulate the device
atomics (compare-exchange, exchange, fetch-add) through one process lock, so
the lock-word protocol is executed exactly as in the compiled path.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np

FLAG = np.uint32(1 << 31)
UNMASK = np.uint32((1 << 31) - 1)
NO_NEIGHBOR = np.int64(1 << 62)

ROUTE_LOCAL = 0
ROUTE_REDIRECTED = 1
ROUTE_GLOBAL = 2


class _Atomics:
    """Word-level atomics over a uint32 buffer."""

    def __init__(self, words: np.ndarray):
        self.words = words
        self._lock = threading.Lock()

    def cas(self, i: int, expected: int, desired: int) -> int:
        with self._lock:
            prev = int(self.words[i])
            if prev == expected:
                self.words[i] = desired
            return prev

    def exchange(self, i: int, value: int) -> int:
        with self._lock:
            prev = int(self.words[i])
            self.words[i] = value
            return prev

    def fetch_add(self, i: int, value: int) -> int:
        with self._lock:
            prev = int(self.words[i])
            self.words[i] = prev + value
            return prev


def _chunks(n: int, lanes: int):
    lanes = max(1, min(lanes, n)) if n else 1
    bounds = np.linspace(0, n, lanes + 1).astype(np.int64)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _run_lanes(fn, ranges, lanes: int):
    if len(ranges) <= 1 or lanes <= 1:
        for r in ranges:
            fn(*r)
        return
    with ThreadPoolExecutor(max_workers=lanes) as pool:
        for fut in [pool.submit(fn, *r) for r in ranges]:
            fut.result()


# --------------------------------------------------------------- histogram

def voxel_histogram_serial(vidx: np.ndarray, voxel_count: int) -> np.ndarray:
    return np.bincount(np.asarray(vidx, dtype=np.int64), minlength=voxel_count).astype(np.uint32)


def block_table(vidx, block_size: int, flush) -> np.ndarray:
    """Fill one block-local fused (key << 16 | value) open-addressing table.

    ``flush(voxel, amount)`` receives saturated entries (value 0xFFFF) as they
    occur; the caller flushes the returned table's remaining entries.
    """
    table = [0] * block_size
    mask = block_size - 1
    for v in vidx:
        v = int(v)
        key = v & mask
        probes = 0
        while True:
            prev = table[key]
            if prev == 0:
                table[key] = v << 16
            if prev == 0 or (prev >> 16) == v:
                table[key] += 1
                if table[key] & 0xFFFF == 0xFFFF:
                    flush(v, 0xFFFF)
                    table[key] = v << 16
                break
            key = (key + 1) & mask
            probes += 1
            if probes >= block_size:
                raise OverflowError("block-local table full")
    return np.array(table, dtype=np.uint32)


def voxel_histogram_blocked(vidx: np.ndarray, voxel_count: int, block_size: int, lanes: int) -> np.ndarray:
    vidx = np.asarray(vidx, dtype=np.uint32)
    hist = np.zeros(voxel_count, dtype=np.uint32)
    atom = _Atomics(hist)
    m = vidx.shape[0]
    n_blocks = (m + block_size - 1) // block_size

    def flush(v, amount):
        atom.fetch_add(v, amount)

    def lane(b0, b1):
        for b in range(b0, b1):
            table = block_table(vidx[b * block_size:(b + 1) * block_size], block_size, flush)
            for entry in table.tolist():
                if entry & 0xFFFF:
                    atom.fetch_add(entry >> 16, entry & 0xFFFF)

    _run_lanes(lane, _chunks(n_blocks, lanes), lanes)
    return hist


def prefix_offsets_inplace(hist: np.ndarray) -> int:
    """Overwrite counts with segment start offsets; return the total slot count."""
    counts = hist.astype(np.uint64)
    seg = np.where(counts == 0, 2, counts + 2)
    ends = np.cumsum(seg)
    total = int(ends[-1]) if ends.size else 0
    if total > 0xFFFFFFFF:
        return -1
    hist[0] = 0
    hist[1:] = ends[:-1]
    return total


# ----------------------------------------------------------------- scatter

def _capacities(offsets: np.ndarray, total: int) -> np.ndarray:
    ends = np.empty(offsets.shape[0], dtype=np.int64)
    ends[:-1] = offsets[1:]
    ends[-1] = total
    return ends - offsets.astype(np.int64) - 2


def scatter_serial(vidx, offsets, total: int, arena) -> int:
    vidx = np.asarray(vidx, dtype=np.int64)
    if vidx.size == 0:
        return 0
    counts = np.bincount(vidx, minlength=offsets.shape[0])
    if np.any(counts > _capacities(offsets, total)):
        return 1
    order = np.argsort(vidx, kind="stable")
    sorted_v = vidx[order]
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    rank = np.arange(vidx.size) - starts[sorted_v]
    base = offsets.astype(np.int64)
    arena[base[sorted_v] + 2 + rank] = order.astype(np.uint32)
    occupied = np.nonzero(counts)[0]
    arena[base[occupied] + 1] = counts[occupied].astype(np.uint32)
    return 0


def scatter_parallel(vidx, offsets, total: int, arena, lanes: int) -> int:
    vidx = np.asarray(vidx, dtype=np.int64)
    caps = _capacities(offsets, total)
    atom = _Atomics(arena)
    failed = []

    def lane(lo, hi):
        for i in range(lo, hi):
            v = int(vidx[i])
            addr = int(offsets[v])
            while atom.cas(addr, 0, 1) != 0:
                pass
            count = int(arena[addr + 1])
            if count >= caps[v]:
                failed.append(i)
            else:
                arena[addr + 2 + count] = i
                arena[addr + 1] = count + 1
            atom.exchange(addr, 0)

    _run_lanes(lane, _chunks(vidx.size, lanes), lanes)
    return 1 if failed else 0


# ---------------------------------------------------------------- dilation

def _neighbor_table(n_bits: int) -> np.ndarray:
    """(V, 6) neighbor indices in offset order; NO_NEIGHBOR where clipped."""
    cells = 1 << n_bits
    v = np.arange(1 << (3 * n_bits), dtype=np.int64)
    mask = cells - 1
    x, y, z = (v >> (2 * n_bits)) & mask, (v >> n_bits) & mask, v & mask
    out = np.empty((v.size, 6), dtype=np.int64)
    for j, (axis, step, delta) in enumerate(
        ((z, 1, 1), (z, -1, -1), (y, cells, 1), (y, -cells, -1),
         (x, cells * cells, 1), (x, -cells * cells, -1))
    ):
        ok = (axis + delta >= 0) & (axis + delta < cells)
        out[:, j] = np.where(ok, v + step, NO_NEIGHBOR)
    return out


def dilate_serial(arena, offsets, n_bits: int, layers: int) -> None:
    # Synchronous layers, ascending-voxel first-writer-wins: the writer of an
    # empty voxel is its smallest non-empty neighbor from the previous layer.
    nbr = _neighbor_table(n_bits)
    state_addr = offsets.astype(np.int64) + 1
    for _ in range(layers):
        states = arena[state_addr]
        nonempty = states != 0
        roots = np.where(states & FLAG, states & UNMASK, np.arange(states.size, dtype=np.uint32))
        valid = nbr != NO_NEIGHBOR
        cand = np.where(valid, nbr, 0)
        cand = np.where(valid & nonempty[cand], nbr, NO_NEIGHBOR)
        writer = cand.min(axis=1)
        targets = np.nonzero(~nonempty & (writer != NO_NEIGHBOR))[0]
        if targets.size == 0:
            break
        arena[state_addr[targets]] = roots[writer[targets]] | FLAG


def dilate_parallel(arena, offsets, n_bits: int, layers: int, lanes: int) -> None:
    nbr = _neighbor_table(n_bits).tolist()
    offs = offsets.astype(np.int64)
    state_addr = offs + 1
    atom = _Atomics(arena)
    flag, unmask = int(FLAG), int(UNMASK)
    for _ in range(layers):
        states = arena[state_addr].tolist()

        def lane(lo, hi):
            for v in range(lo, hi):
                s = states[v]
                if s == 0:
                    continue
                root = s & unmask if s & flag else v
                for w in nbr[v]:
                    if w == NO_NEIGHBOR:
                        continue
                    addr = int(offs[w])
                    # a held lock means another lane is tagging w this layer
                    if atom.cas(addr, 0, 1) == 0:
                        if arena[addr + 1] == 0:
                            arena[addr + 1] = root | flag
                        atom.exchange(addr, 0)

        _run_lanes(lane, _chunks(len(states), lanes), lanes)


# --------------------------------------------------------------------- NNS

def _sq_dist(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    dx = q[:, 0:1] - p[None, :, 0]
    dy = q[:, 1:2] - p[None, :, 1]
    dz = q[:, 2:3] - p[None, :, 2]
    return dx * dx + dy * dy + dz * dz


def _nearest(queries: np.ndarray, cand_idx: np.ndarray, target: np.ndarray, out_idx, out_dist, rows):
    """Exact NN of ``queries`` over ascending ``cand_idx``; first minimum wins."""
    pts = target[cand_idx]
    step = max(1, (1 << 22) // max(1, cand_idx.size))
    for a in range(0, rows.size, step):
        r = rows[a:a + step]
        d = _sq_dist(queries[r], pts)
        j = np.argmin(d, axis=1)
        out_idx[r] = cand_idx[j]
        out_dist[r] = d[np.arange(r.size), j]


def search_batch(vidx, queries, arena, offsets, target, use_tags: bool, lanes: int):
    vidx = np.asarray(vidx, dtype=np.int64)
    nq = vidx.size
    out_idx = np.zeros(nq, dtype=np.int64)
    out_dist = np.zeros(nq, dtype=np.float64)
    route = np.full(nq, ROUTE_LOCAL, dtype=np.uint8)
    offs = offsets.astype(np.int64)

    state = arena[offs[vidx] + 1]
    tagged = (state & FLAG) != 0
    resolved = vidx.copy()
    if use_tags:
        resolved[tagged] = (state[tagged] & UNMASK).astype(np.int64)
        route[tagged] = ROUTE_REDIRECTED
        count = arena[offs[resolved] + 1].astype(np.int64)
    else:
        count = np.where(tagged, 0, state).astype(np.int64)
    glob = count == 0
    route[glob] = ROUTE_GLOBAL

    def run(lo, hi):
        sl = np.arange(lo, hi)
        local = sl[~glob[sl]]
        if local.size:
            order = local[np.argsort(resolved[local], kind="stable")]
            keys = resolved[order]
            cuts = np.flatnonzero(np.diff(keys)) + 1
            for grp in np.split(order, cuts):
                v = resolved[grp[0]]
                base = offs[v] + 2
                cand = np.sort(arena[base:base + count[grp[0]]].astype(np.int64))
                _nearest(queries, cand, target, out_idx, out_dist, grp)
        g = sl[glob[sl]]
        if g.size:
            _nearest(queries, np.arange(target.shape[0]), target, out_idx, out_dist, g)

    _run_lanes(run, _chunks(nq, lanes), lanes)
    return out_idx, out_dist, route


def brute_batch(queries, target, lanes: int):
    nq = queries.shape[0]
    out_idx = np.zeros(nq, dtype=np.int64)
    out_dist = np.zeros(nq, dtype=np.float64)
    allidx = np.arange(target.shape[0])

    def run(lo, hi):
        _nearest(queries, allidx, target, out_idx, out_dist, np.arange(lo, hi))

    _run_lanes(run, _chunks(nq, lanes), lanes)
    return out_idx, out_dist


def kd_query_one(q, points, perm, split_dim, split_val, left, right, lo, hi):
    qx, qy, qz = float(q[0]), float(q[1]), float(q[2])
    qc = (qx, qy, qz)
    best = float("inf")
    best_i = -1
    stack = [(0, 0.0)]
    while stack:
        node, plane = stack.pop()
        if plane > best:
            continue
        if left[node] < 0:
            for k in range(lo[node], hi[node]):
                i = perm[k]
                p = points[i]
                dx = qx - p[0]
                dy = qy - p[1]
                dz = qz - p[2]
                d = dx * dx + dy * dy + dz * dz
                if d < best or (d == best and i < best_i):
                    best, best_i = d, i
            continue
        diff = qc[split_dim[node]] - split_val[node]
        if diff < 0:
            near, far = left[node], right[node]
        else:
            near, far = right[node], left[node]
        stack.append((far, diff * diff))
        stack.append((near, 0.0))
    return best_i, best


def kd_query_batch(queries, points, perm, split_dim, split_val, left, right, lo, hi, lanes: int):
    nq = queries.shape[0]
    out_idx = np.zeros(nq, dtype=np.int64)
    out_dist = np.zeros(nq, dtype=np.float64)
    args = (points.tolist(), perm.tolist(), split_dim.tolist(), split_val.tolist(),
            left.tolist(), right.tolist(), lo.tolist(), hi.tolist())
    qs = queries.tolist()

    def run(a, b):
        for i in range(a, b):
            out_idx[i], out_dist[i] = kd_query_one(qs[i], *args)

    _run_lanes(run, _chunks(nq, lanes), lanes)
    return out_idx, out_dist
