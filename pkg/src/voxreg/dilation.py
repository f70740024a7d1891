"""Layered 6-neighbor dilation of occupied voxels into empty ones.

An empty voxel reached by dilation gets its state word set to
``mask(root)``, where ``root`` is the occupied voxel the wave started from.
Tagged voxels propagate the root they carry, never their own index, so
every tag resolves to a real point count in one lookup.
"""

from __future__ import annotations

import numpy as np

from . import _backend
from .core import FLAG_BIT, INDEX_MASK, GridConfig, InputError
from .voxelgrid import AddrOffsets, VoxelArena, _check_mode, _lanes


def mask(root: int) -> int:
    if not 0 <= root < FLAG_BIT:
        raise InputError(f"root index {root} does not fit in 31 bits")
    return root | FLAG_BIT


def unmask(word: int) -> tuple[int, bool]:
    """Split a state word into (value, dilated?)."""
    return word & INDEX_MASK, bool(word & FLAG_BIT)


def dilate(arena: VoxelArena, offs: AddrOffsets, cfg: GridConfig, mode: str = "serial",
           lanes: int | None = None, layers: int | None = None) -> None:
    """Run ``cfg.dilation_layers`` synchronous layers (or ``layers`` if given).

    Serial mode visits voxels in ascending index and the first writer wins,
    which makes root choice deterministic. Parallel lanes take the target
    voxel's lock word before the check-empty-then-tag step and skip voxels
    whose lock is held, since the holder is tagging it in the same layer.
    """
    _check_mode(mode)
    n_layers = cfg.dilation_layers if layers is None else layers
    if n_layers <= 0:
        return
    k = _backend.kernels()
    if mode == "serial":
        k.dilate_serial(arena.slots, offs.offsets, cfg.n_bits, n_layers)
    else:
        k.dilate_parallel(arena.slots, offs.offsets, cfg.n_bits, n_layers, _lanes(lanes))


def tagged_voxels(arena: VoxelArena, offs: AddrOffsets) -> dict[int, int]:
    """Map of tagged voxel -> root voxel."""
    states = arena.state_words(offs)
    idx = np.flatnonzero(states & np.uint32(FLAG_BIT))
    return {int(v): int(states[v] & np.uint32(INDEX_MASK)) for v in idx}


def dump_tags_csv(arena: VoxelArena, offs: AddrOffsets, fh) -> None:
    fh.write("index,root\n")
    for v, root in sorted(tagged_voxels(arena, offs).items()):
        fh.write(f"{v},{root}\n")
