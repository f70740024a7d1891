"""Voxel-dilation ICP with occupancy-proportional voxel memory."""

__version__ = "0.1.0"

from ._backend import active_backend, available_backends, use_backend
from .core import (
    ConsistencyError,
    DegenerateInputError,
    GridConfig,
    InputError,
    ParseError,
    PointCloud,
    ResourceError,
    RigidTransform,
    UnsupportedFormatError,
    VoxregError,
)
from .icp import IcpConfig, IcpTrace, estimate_transform, register, rmse
from .memmodel import MemReport, account

__all__ = [
    "ConsistencyError",
    "DegenerateInputError",
    "GridConfig",
    "IcpConfig",
    "IcpTrace",
    "InputError",
    "MemReport",
    "ParseError",
    "PointCloud",
    "ResourceError",
    "RigidTransform",
    "UnsupportedFormatError",
    "VoxregError",
    "account",
    "active_backend",
    "available_backends",
    "estimate_transform",
    "register",
    "rmse",
    "use_backend",
]
