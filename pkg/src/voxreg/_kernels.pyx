# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels (OpenMP lanes, GCC atomics).

Signatures mirror ``voxreg._fallback``.
"""

from cython.parallel cimport prange
from libc.stdint cimport uint8_t, uint32_t, int32_t, int64_t, uint64_t
from libc.stdlib cimport malloc, free
from libc.string cimport memset
from libc.math cimport INFINITY

import numpy as np

cdef extern from *:
    """
    #include <stdint.h>
    static inline uint32_t vx_cas(uint32_t *p, uint32_t expected, uint32_t desired) {
        __atomic_compare_exchange_n(p, &expected, desired, 0,
                                    __ATOMIC_ACQ_REL, __ATOMIC_ACQUIRE);
        return expected;
    }
    static inline uint32_t vx_exchange(uint32_t *p, uint32_t v) {
        return __atomic_exchange_n(p, v, __ATOMIC_RELEASE);
    }
    static inline void vx_add(uint32_t *p, uint32_t v) {
        __atomic_fetch_add(p, v, __ATOMIC_RELAXED);
    }
    static inline void vx_set_flag(int *p) {
        __atomic_store_n(p, 1, __ATOMIC_RELAXED);
    }
    """
    uint32_t vx_cas(uint32_t *p, uint32_t expected, uint32_t desired) nogil
    uint32_t vx_exchange(uint32_t *p, uint32_t v) nogil
    void vx_add(uint32_t *p, uint32_t v) nogil
    void vx_set_flag(int *p) nogil

cdef uint32_t FLAG = 0x80000000u
cdef uint32_t UNMASK = 0x7FFFFFFFu

ROUTE_LOCAL = 0
ROUTE_REDIRECTED = 1
ROUTE_GLOBAL = 2


# --------------------------------------------------------------- histogram

def voxel_histogram_serial(const uint32_t[::1] vidx, Py_ssize_t voxel_count):
    hist = np.zeros(voxel_count, dtype=np.uint32)
    cdef uint32_t[::1] h = hist
    cdef Py_ssize_t i
    with nogil:
        for i in range(vidx.shape[0]):
            h[vidx[i]] += 1
    return hist


cdef int _fill_block(const uint32_t[::1] vidx, Py_ssize_t lo, Py_ssize_t hi,
                     uint32_t *table, uint32_t block_size, uint32_t *hist) noexcept nogil:
    # One lane owns the table, so plain loads/stores stand in for the
    # block-shared atomics; only the global flush is atomic.
    cdef uint32_t mask = block_size - 1
    cdef uint32_t v, key, prev, probes
    cdef Py_ssize_t i
    memset(table, 0, block_size * sizeof(uint32_t))
    for i in range(lo, hi):
        v = vidx[i]
        key = v & mask
        probes = 0
        while True:
            prev = table[key]
            if prev == 0:
                table[key] = v << 16
            if prev == 0 or (prev >> 16) == v:
                table[key] += 1
                if (table[key] & 0xFFFF) == 0xFFFF:
                    vx_add(&hist[v], 0xFFFF)
                    table[key] = v << 16
                break
            key = (key + 1) & mask
            probes += 1
            if probes >= block_size:
                return 1
    for i in range(block_size):
        if table[i] & 0xFFFF:
            vx_add(&hist[table[i] >> 16], table[i] & 0xFFFF)
    return 0


def voxel_histogram_blocked(const uint32_t[::1] vidx, Py_ssize_t voxel_count,
                            Py_ssize_t block_size, int lanes):
    hist = np.zeros(voxel_count, dtype=np.uint32)
    cdef uint32_t[::1] h = hist
    cdef Py_ssize_t m = vidx.shape[0]
    cdef Py_ssize_t n_blocks = (m + block_size - 1) // block_size
    cdef Py_ssize_t b, hi
    cdef uint32_t *table
    cdef int failed = 0
    cdef uint32_t *hp = &h[0] if voxel_count > 0 else NULL
    with nogil:
        for b in prange(n_blocks, num_threads=lanes, schedule="static"):
            table = <uint32_t *> malloc(block_size * sizeof(uint32_t))
            hi = (b + 1) * block_size
            if hi > m:
                hi = m
            if _fill_block(vidx, b * block_size, hi, table, <uint32_t> block_size, hp):
                vx_set_flag(&failed)
            free(table)
    if failed:
        raise OverflowError("block-local table full")
    return hist


def prefix_offsets_inplace(uint32_t[::1] hist):
    cdef uint64_t head = 0
    cdef uint64_t cnt
    cdef Py_ssize_t v
    with nogil:
        for v in range(hist.shape[0]):
            cnt = 2 if hist[v] == 0 else <uint64_t> hist[v] + 2
            hist[v] = <uint32_t> head
            head += cnt
    if head > 0xFFFFFFFF:
        return -1
    return head


# ----------------------------------------------------------------- scatter

cdef inline int64_t _segment_end(const uint32_t[::1] offsets, Py_ssize_t v, int64_t total) noexcept nogil:
    if v + 1 < offsets.shape[0]:
        return offsets[v + 1]
    return total


def scatter_serial(const uint32_t[::1] vidx, const uint32_t[::1] offsets,
                   int64_t total, uint32_t[::1] arena):
    cdef Py_ssize_t i
    cdef uint32_t v, addr, count
    cdef int failed = 0
    with nogil:
        for i in range(vidx.shape[0]):
            v = vidx[i]
            addr = offsets[v]
            count = arena[addr + 1]
            if count + 2 + addr >= _segment_end(offsets, v, total):
                failed = 1
                break
            arena[addr + 2 + count] = <uint32_t> i
            arena[addr + 1] = count + 1
    return failed


def scatter_parallel(const uint32_t[::1] vidx, const uint32_t[::1] offsets,
                     int64_t total, uint32_t[::1] arena, int lanes):
    cdef Py_ssize_t i
    cdef uint32_t v, addr, count
    cdef int failed = 0
    cdef uint32_t *mem = &arena[0] if arena.shape[0] > 0 else NULL
    with nogil:
        for i in prange(vidx.shape[0], num_threads=lanes, schedule="static"):
            v = vidx[i]
            addr = offsets[v]
            while vx_cas(&mem[addr], 0, 1) != 0:
                pass
            count = mem[addr + 1]
            if count + 2 + addr >= _segment_end(offsets, v, total):
                vx_set_flag(&failed)
            else:
                mem[addr + 2 + count] = <uint32_t> i
                mem[addr + 1] = count + 1
            vx_exchange(&mem[addr], 0)
    return failed


# ---------------------------------------------------------------- dilation

cdef inline int64_t _step(Py_ssize_t v, int j, int n_bits) noexcept nogil:
    # neighbor of v in direction j (offset order), or -1 when clipped
    cdef int64_t cells = 1 << n_bits
    cdef int64_t mask = cells - 1
    cdef int64_t a
    if j < 2:
        a = v & mask
        if j == 0:
            return v + 1 if a + 1 < cells else -1
        return v - 1 if a > 0 else -1
    if j < 4:
        a = (v >> n_bits) & mask
        if j == 2:
            return v + cells if a + 1 < cells else -1
        return v - cells if a > 0 else -1
    a = (v >> (2 * n_bits)) & mask
    if j == 4:
        return v + cells * cells if a + 1 < cells else -1
    return v - cells * cells if a > 0 else -1


cdef inline void _dilate_voxel(uint32_t *mem, const uint32_t[::1] offsets,
                               const uint32_t *states, Py_ssize_t v, int n_bits) noexcept nogil:
    cdef uint32_t s = states[v]
    cdef uint32_t root, addr
    cdef int64_t w
    cdef int j
    if s == 0:
        return
    root = (s & UNMASK) if (s & FLAG) else <uint32_t> v
    for j in range(6):
        w = _step(v, j, n_bits)
        if w < 0:
            continue
        addr = offsets[w]
        if vx_cas(&mem[addr], 0, 1) == 0:
            if mem[addr + 1] == 0:
                mem[addr + 1] = root | FLAG
            vx_exchange(&mem[addr], 0)


cdef void _dilate(uint32_t[::1] arena, const uint32_t[::1] offsets, int n_bits,
                  int layers, bint parallel, int lanes) noexcept nogil:
    cdef Py_ssize_t nv = offsets.shape[0]
    cdef uint32_t *states = <uint32_t *> malloc(nv * sizeof(uint32_t))
    cdef uint32_t *mem = &arena[0]
    cdef Py_ssize_t v
    cdef int layer
    for layer in range(layers):
        for v in range(nv):
            states[v] = mem[offsets[v] + 1]
        if not parallel:
            for v in range(nv):
                _dilate_voxel(mem, offsets, states, v, n_bits)
        else:
            for v in prange(nv, num_threads=lanes, schedule="static"):
                _dilate_voxel(mem, offsets, states, v, n_bits)
    free(states)


def dilate_serial(uint32_t[::1] arena, const uint32_t[::1] offsets, int n_bits, int layers):
    with nogil:
        _dilate(arena, offsets, n_bits, layers, False, 1)


def dilate_parallel(uint32_t[::1] arena, const uint32_t[::1] offsets, int n_bits,
                    int layers, int lanes):
    with nogil:
        _dilate(arena, offsets, n_bits, layers, True, lanes)


# --------------------------------------------------------------------- NNS

cdef inline double _d2(const double[:, ::1] q, Py_ssize_t i,
                       const double[:, ::1] p, Py_ssize_t k) noexcept nogil:
    cdef double dx = q[i, 0] - p[k, 0]
    cdef double dy = q[i, 1] - p[k, 1]
    cdef double dz = q[i, 2] - p[k, 2]
    return dx * dx + dy * dy + dz * dz


def search_batch(const uint32_t[::1] vidx, const double[:, ::1] queries,
                 const uint32_t[::1] arena, const uint32_t[::1] offsets,
                 const double[:, ::1] target, bint use_tags, int lanes):
    cdef Py_ssize_t nq = vidx.shape[0]
    cdef Py_ssize_t nt = target.shape[0]
    out_idx_a = np.zeros(nq, dtype=np.int64)
    out_dist_a = np.zeros(nq, dtype=np.float64)
    route_a = np.zeros(nq, dtype=np.uint8)
    cdef int64_t[::1] out_idx = out_idx_a
    cdef double[::1] out_dist = out_dist_a
    cdef uint8_t[::1] route = route_a
    cdef Py_ssize_t i, k
    cdef uint32_t addr, s, count, pi
    cdef double best, d
    cdef int64_t best_i
    cdef uint8_t r
    with nogil:
        for i in prange(nq, num_threads=lanes, schedule="static"):
            addr = offsets[vidx[i]]
            s = arena[addr + 1]
            r = 0
            if s & FLAG:
                if use_tags:
                    addr = offsets[s & UNMASK]
                    count = arena[addr + 1]
                    r = 1
                else:
                    count = 0
            else:
                count = s
            best = INFINITY
            best_i = -1
            if count == 0:
                r = 2
                for k in range(nt):
                    d = _d2(queries, i, target, k)
                    if d < best:
                        best = d
                        best_i = k
            else:
                for k in range(count):
                    pi = arena[addr + 2 + k]
                    d = _d2(queries, i, target, pi)
                    if d < best or (d == best and pi < best_i):
                        best = d
                        best_i = pi
            out_idx[i] = best_i
            out_dist[i] = best
            route[i] = r
    return out_idx_a, out_dist_a, route_a


def brute_batch(const double[:, ::1] queries, const double[:, ::1] target, int lanes):
    cdef Py_ssize_t nq = queries.shape[0]
    cdef Py_ssize_t nt = target.shape[0]
    out_idx_a = np.zeros(nq, dtype=np.int64)
    out_dist_a = np.zeros(nq, dtype=np.float64)
    cdef int64_t[::1] out_idx = out_idx_a
    cdef double[::1] out_dist = out_dist_a
    cdef Py_ssize_t i, k
    cdef double best, d
    cdef int64_t best_i
    with nogil:
        for i in prange(nq, num_threads=lanes, schedule="static"):
            best = INFINITY
            best_i = -1
            for k in range(nt):
                d = _d2(queries, i, target, k)
                if d < best:
                    best = d
                    best_i = k
            out_idx[i] = best_i
            out_dist[i] = best
    return out_idx_a, out_dist_a


cdef enum:
    KD_STACK = 128


cdef void _kd_one(const double[:, ::1] queries, Py_ssize_t i,
                  const double[:, ::1] points, const int64_t[::1] perm,
                  const int32_t[::1] split_dim, const double[::1] split_val,
                  const int64_t[::1] left, const int64_t[::1] right,
                  const int64_t[::1] lo, const int64_t[::1] hi,
                  int64_t *res_i, double *res_d) noexcept nogil:
    cdef int64_t stack_node[KD_STACK]
    cdef double stack_plane[KD_STACK]
    cdef int sp = 1
    cdef int64_t node, near, far, k, pi
    cdef double plane, diff, d
    cdef double best = INFINITY
    cdef int64_t best_i = -1
    stack_node[0] = 0
    stack_plane[0] = 0.0
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        plane = stack_plane[sp]
        if plane > best:
            continue
        if left[node] < 0:
            for k in range(lo[node], hi[node]):
                pi = perm[k]
                d = _d2(queries, i, points, pi)
                if d < best or (d == best and pi < best_i):
                    best = d
                    best_i = pi
            continue
        diff = queries[i, split_dim[node]] - split_val[node]
        if diff < 0:
            near = left[node]
            far = right[node]
        else:
            near = right[node]
            far = left[node]
        stack_node[sp] = far
        stack_plane[sp] = diff * diff
        stack_node[sp + 1] = near
        stack_plane[sp + 1] = 0.0
        sp += 2
    res_i[0] = best_i
    res_d[0] = best


def kd_query_batch(const double[:, ::1] queries, const double[:, ::1] points,
                   const int64_t[::1] perm, const int32_t[::1] split_dim,
                   const double[::1] split_val, const int64_t[::1] left,
                   const int64_t[::1] right, const int64_t[::1] lo,
                   const int64_t[::1] hi, int lanes):
    cdef Py_ssize_t nq = queries.shape[0]
    out_idx_a = np.zeros(nq, dtype=np.int64)
    out_dist_a = np.zeros(nq, dtype=np.float64)
    cdef int64_t[::1] out_idx = out_idx_a
    cdef double[::1] out_dist = out_dist_a
    cdef Py_ssize_t i
    with nogil:
        for i in prange(nq, num_threads=lanes, schedule="static"):
            _kd_one(queries, i, points, perm, split_dim, split_val, left, right,
                    lo, hi, &out_idx[i], &out_dist[i])
    return out_idx_a, out_dist_a
