"""Kernel backend selection.

The compiled extension is used when importable; set ``VOXREG_PURE_PYTHON=1``
to force the numpy fallback. ``use_backend`` switches temporarily (tests and
the backend benchmark use it).
"""

from __future__ import annotations

import logging
import os
from contextlib import contextmanager

from . import _fallback

log = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _fallback}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

if os.environ.get("VOXREG_PURE_PYTHON", "") not in ("", "0") or _compiled is None:
    _active = "python"
else:
    _active = "compiled"
log.debug("voxreg kernel backend: %s", _active)


def kernels():
    return _BACKENDS[_active]


def active_backend() -> str:
    return _active


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


@contextmanager
def use_backend(name: str):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    prev, _active = _active, name
    try:
        yield _BACKENDS[name]
    finally:
        _active = prev


def default_lanes() -> int:
    env = os.environ.get("VOXREG_LANES")
    if env:
        try:
            lanes = int(env)
        except ValueError:
            lanes = 0
        if lanes >= 1:
            return lanes
    return os.cpu_count() or 1
