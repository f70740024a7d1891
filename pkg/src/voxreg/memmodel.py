"""Byte accounting: segmented arena vs. a fixed block per voxel.

All byte counts are exact integers. "MB" means 2**20 bytes throughout, the
convention under which a 4096-voxel histogram plus offset table is
0.03125 MB.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .core import GridConfig, InputError
from .voxelgrid import SLOT_BYTES, AddrOffsets

MB = 1 << 20
DEFAULT_BASELINE_BLOCK_BYTES = 64 * 1024


@dataclass(frozen=True)
class MemReport:
    static_bytes: int
    dynamic_bytes: int
    ours_total_bytes: int
    baseline_bytes: int
    saving_ratio: float
    total_slots: int = 0
    # set when a caller replays externally reported figures
    ours_override_mb: float | None = None
    baseline_override_mb: float | None = None

    @property
    def static_mb(self) -> float:
        return self.static_bytes / MB

    @property
    def ours_mb(self) -> float:
        return self.ours_total_bytes / MB

    @property
    def baseline_mb(self) -> float:
        return self.baseline_bytes / MB

    def as_dict(self) -> dict:
        d = asdict(self)
        d.update(static_mb=self.static_mb, ours_mb=self.ours_mb, baseline_mb=self.baseline_mb)
        return d


def saving_ratio(ours: float, baseline: float) -> float:
    if baseline <= 0:
        raise InputError("baseline must be positive")
    return 1.0 - ours / baseline


def static_bytes(cfg: GridConfig) -> int:
    return 2 * cfg.voxel_count * SLOT_BYTES


def account(offs: AddrOffsets, cfg: GridConfig,
            baseline_block_bytes: int = DEFAULT_BASELINE_BLOCK_BYTES,
            baseline_mb: float | None = None, ours_mb: float | None = None) -> MemReport:
    """Static (histogram + offsets) plus dynamic (arena) bytes against the
    monolithic model ``voxel_count * baseline_block_bytes``.

    ``baseline_mb``/``ours_mb`` replace the modelled totals in the ratio,
    for replaying externally reported figures; byte fields stay formula values.
    """
    if baseline_block_bytes <= 0:
        raise InputError("baseline_block_bytes must be positive")
    if offs.offsets.size != cfg.voxel_count:
        raise InputError("offsets do not match the grid configuration")
    stat = static_bytes(cfg)
    dyn = int(offs.total_slots) * SLOT_BYTES
    ours = stat + dyn
    baseline = cfg.voxel_count * int(baseline_block_bytes)
    ratio = saving_ratio(
        ours if ours_mb is None else ours_mb * MB,
        baseline if baseline_mb is None else baseline_mb * MB,
    )
    return MemReport(stat, dyn, ours, baseline, ratio, int(offs.total_slots), ours_mb, baseline_mb)


def predicted_total_bytes(point_count: int, cfg: GridConfig) -> int:
    """Closed form of ``account(...).ours_total_bytes`` for any cloud of
    ``point_count`` points: every point is one slot, every voxel two."""
    return static_bytes(cfg) + (point_count + 2 * cfg.voxel_count) * SLOT_BYTES
