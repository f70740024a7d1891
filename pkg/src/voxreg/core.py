"""Domain types, voxel index arithmetic and the bit-field conventions.

The normalized domain is ``[-1, 1]`` per axis, cut into ``2**n_bits`` cells.
A voxel is addressed by a packed index ``(vx << 2N) | (vy << N) | vz``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_N_BITS = 5
FLAG_BIT = 1 << 31
INDEX_MASK = FLAG_BIT - 1


class VoxregError(Exception):
    """Base class for all errors raised by voxreg."""


class InputError(VoxregError, ValueError):
    pass


class ParseError(VoxregError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedFormatError(VoxregError, ValueError):
    pass


class DegenerateInputError(InputError):
    pass


class ResourceError(VoxregError, MemoryError):
    pass


class ConsistencyError(VoxregError, RuntimeError):
    """Histogram, offsets and arena disagree with each other."""


@dataclass(frozen=True)
class GridConfig:
    n_bits: int = 4
    dilation_layers: int = 10

    def __post_init__(self):
        if not isinstance(self.n_bits, (int, np.integer)) or not 1 <= self.n_bits <= MAX_N_BITS:
            raise InputError(f"n-bits must be in 1..={MAX_N_BITS}, got {self.n_bits}")
        if self.dilation_layers < 0:
            raise InputError(f"dilation layers must be >= 0, got {self.dilation_layers}")

    @property
    def cells_per_axis(self) -> int:
        return 1 << self.n_bits

    @property
    def voxel_count(self) -> int:
        return 1 << (3 * self.n_bits)

    @property
    def voxel_edge(self) -> float:
        return 2.0 / self.cells_per_axis


@dataclass
class PointCloud:
    """Ordered (m, 3) float64 points; row order is the canonical point id."""

    points: np.ndarray
    name: str = ""

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InputError(f"points must have shape (m, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InputError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # set by estimate_transform when the cross-covariance is rank deficient
    degenerate: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.array(self.translation, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, mat) -> "RigidTransform":
        mat = np.asarray(mat, dtype=np.float64)
        return cls(mat[:3, :3], mat[:3, 3])

    def as_matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ inner``: apply ``inner`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ inner.rotation,
            self.rotation @ inner.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.rotation.T @ self.rotation - np.eye(3))))

    def is_valid(self, tol: float = 1e-9) -> bool:
        return (
            self.orthonormality_error() <= tol
            and abs(np.linalg.det(self.rotation) - 1.0) <= tol
        )

    def reorthonormalized(self) -> "RigidTransform":
        u, _, vt = np.linalg.svd(self.rotation)
        d = np.sign(np.linalg.det(u @ vt))
        rot = u @ np.diag([1.0, 1.0, d]) @ vt
        return RigidTransform(rot, self.translation.copy())

    def rotation_angle_deg(self) -> float:
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def _check_finite(values) -> None:
    if not np.all(np.isfinite(values)):
        raise InputError(f"non-finite coordinate in {values!r}")


def quantize(p, cfg: GridConfig) -> tuple[int, int, int]:
    arr = np.asarray(p, dtype=np.float64).reshape(3)
    _check_finite(arr)
    vx, vy, vz = quantize_points(arr[None, :], cfg)[0]
    return int(vx), int(vy), int(vz)


def quantize_points(points: np.ndarray, cfg: GridConfig) -> np.ndarray:
    """Vectorized quantize; returns an (m, 3) int64 array of axis cells."""
    pts = np.asarray(points, dtype=np.float64)
    cells = cfg.cells_per_axis
    # points drift outside [-1, 1] during ICP; clamp both ends
    q = np.floor((pts + 1.0) / 2.0 * cells)
    np.clip(q, 0, cells - 1, out=q)
    return q.astype(np.int64)


def encode_index(vx: int, vy: int, vz: int, cfg: GridConfig) -> int:
    n = cfg.n_bits
    hi = cfg.cells_per_axis
    for name, val in (("vx", vx), ("vy", vy), ("vz", vz)):
        if not 0 <= val < hi:
            raise InputError(f"{name}={val} outside [0, {hi - 1}]")
    return (vx << (2 * n)) | (vy << n) | vz


def decode_index(packed: int, cfg: GridConfig) -> tuple[int, int, int]:
    if not 0 <= packed < cfg.voxel_count:
        raise InputError(f"voxel index {packed} outside [0, {cfg.voxel_count - 1}]")
    n = cfg.n_bits
    m = cfg.cells_per_axis - 1
    return (packed >> (2 * n)) & m, (packed >> n) & m, packed & m


def encode_cells(cells: np.ndarray, cfg: GridConfig) -> np.ndarray:
    n = cfg.n_bits
    c = np.asarray(cells, dtype=np.int64)
    return ((c[:, 0] << (2 * n)) | (c[:, 1] << n) | c[:, 2]).astype(np.uint32)


def decode_cells(packed: np.ndarray, cfg: GridConfig) -> np.ndarray:
    n = cfg.n_bits
    m = cfg.cells_per_axis - 1
    p = np.asarray(packed, dtype=np.int64)
    return np.stack([(p >> (2 * n)) & m, (p >> n) & m, p & m], axis=1)


def voxel_indices(points: np.ndarray, cfg: GridConfig) -> np.ndarray:
    """Packed voxel index (uint32) of every point."""
    return encode_cells(quantize_points(points, cfg), cfg)


def neighbor_offsets(cfg: GridConfig) -> list[int]:
    n = cfg.n_bits
    return [1, -1, 1 << n, -(1 << n), 1 << (2 * n), -(1 << (2 * n))]


def neighbor_voxels(packed: int, cfg: GridConfig) -> list[int]:
    """Axis neighbors of ``packed`` that stay inside the grid, in offset order."""
    x, y, z = decode_index(packed, cfg)
    hi = cfg.cells_per_axis - 1
    out = []
    for step, (axis_val, delta) in zip(
        neighbor_offsets(cfg),
        ((z, 1), (z, -1), (y, 1), (y, -1), (x, 1), (x, -1)),
    ):
        if 0 <= axis_val + delta <= hi:
            out.append(packed + step)
    return out
