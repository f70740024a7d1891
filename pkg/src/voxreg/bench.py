"""Benchmark harness: per-stage timings, route mix, memory and final error.

Bench spec files are plain ``key = value`` lines (``#`` comments)::

    datasets = synthetic:two-density-cluster:10000, clouds/bunny.ply
    methods = dilation-icp, brute-icp, kdtree-icp
    repetitions = 3
    warmup = 1
    n_bits = 4
    layers = 10
    max_iters = 50
    rmse_delta = 1e-5
    perturb = 25, 0.1
    seed = 1
    mode = serial
    lanes = 1
    baseline_block_bytes = 65536

A ``synthetic:<kind>:<count>`` dataset registers an independent resample of
the same shape (seed + 1) onto the target; file datasets register a copy of
themselves. Either way the source is then perturbed with ``seed``, so every
method sees the same instance.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, _backend
from .core import GridConfig, InputError, PointCloud
from .icp import BruteMatcher, DilationMatcher, IcpConfig, IcpTrace, KdTreeMatcher, run_icp
from .ingest import (
    RNG_NAME,
    PerturbationSpec,
    apply_normalization,
    gen_synthetic,
    load_cloud,
    normalization_params,
    perturb,
)
from .memmodel import DEFAULT_BASELINE_BLOCK_BYTES, account
from .voxelgrid import MODES, build_grid

log = logging.getLogger(__name__)

METHODS = ("dilation-icp", "brute-icp", "kdtree-icp")


@dataclass
class BenchSpec:
    datasets: list[str] = field(default_factory=list)
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    repetitions: int = 1
    warmup: int = 1
    n_bits: int = 4
    layers: int = 10
    max_iters: int = 50
    rmse_delta: float = 1e-5
    perturb: tuple[float, float] = (25.0, 0.1)
    seed: int = 1
    mode: str = "serial"
    lanes: int | None = None
    baseline_block_bytes: int = DEFAULT_BASELINE_BLOCK_BYTES

    def validate(self) -> None:
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise InputError(f"unknown method(s) {bad}; valid methods: {', '.join(METHODS)}")
        if self.repetitions < 1:
            raise InputError("repetitions must be >= 1")
        if self.warmup < 0:
            raise InputError("warmup must be >= 0")
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}")

    def icp_config(self) -> IcpConfig:
        return IcpConfig(GridConfig(self.n_bits, self.layers), self.max_iters, self.rmse_delta)


def _split_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


_PARSERS = {
    "datasets": _split_list,
    "methods": _split_list,
    "repetitions": int,
    "warmup": int,
    "n_bits": int,
    "layers": int,
    "max_iters": int,
    "rmse_delta": float,
    "perturb": lambda v: tuple(float(x) for x in _split_list(v)),
    "seed": int,
    "mode": str.strip,
    "lanes": int,
    "baseline_block_bytes": int,
}


def parse_spec(text: str, base_dir: Path | None = None) -> BenchSpec:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"bench spec line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _PARSERS:
            raise InputError(f"bench spec line {lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise InputError(f"bench spec line {lineno}: bad value for {key}: {exc}") from None
    if "perturb" in values and len(values["perturb"]) != 2:
        raise InputError("perturb must be 'ROT_DEG, TRANS'")
    spec = BenchSpec(**values)
    if base_dir is not None:
        spec.datasets = [
            d if d.startswith("synthetic:") or Path(d).is_absolute() else str(base_dir / d)
            for d in spec.datasets
        ]
    spec.validate()
    return spec


@dataclass
class BenchRow:
    dataset: str
    method: str
    repetition: int
    n_source: int | None = None
    n_target: int | None = None
    backend: str | None = None
    mode: str | None = None
    status: str = "ok"
    error: str | None = None
    wall_s: float | None = None
    voh_ms: float | None = None
    moc_ms: float | None = None
    vdma_ms: float | None = None
    ddma_ms: float | None = None
    nns_ms: float | None = None
    estimate_ms: float | None = None
    iterations: int | None = None
    converged: bool | None = None
    final_rmse: float | None = None
    rot_err_deg: float | None = None
    trans_err: float | None = None
    local: int | None = None
    redirected: int | None = None
    global_fallback: int | None = None
    static_bytes: int | None = None
    dynamic_bytes: int | None = None
    ours_bytes: int | None = None
    baseline_bytes: int | None = None
    saving_ratio: float | None = None
    perturb_rot_deg: float | None = None
    perturb_trans: float | None = None
    seed: int | None = None

    def stage_ms_sum(self) -> float:
        parts = (self.voh_ms, self.moc_ms, self.vdma_ms, self.ddma_ms, self.nns_ms, self.estimate_ms)
        return sum(p for p in parts if p is not None)


COLUMNS = [f.name for f in fields(BenchRow)]


def make_instance(dataset: str, spec: BenchSpec) -> tuple[PointCloud, PointCloud]:
    """(source, target) in normalized coordinates of the target."""
    if dataset.startswith("synthetic:"):
        parts = dataset.split(":")
        if len(parts) != 3:
            raise InputError(f"synthetic dataset must be 'synthetic:<kind>:<count>', got {dataset!r}")
        kind, count = parts[1], int(parts[2])
        raw_target = gen_synthetic(kind, count, spec.seed)
        raw_source = gen_synthetic(kind, count, spec.seed + 1)
    else:
        raw_target = load_cloud(dataset)
        raw_source = raw_target
    centroid, radius = normalization_params(raw_target)
    target = apply_normalization(raw_target, centroid, radius)
    source = apply_normalization(raw_source, centroid, radius)
    rot, trans = spec.perturb
    source, _ = perturb(source, PerturbationSpec(rot, trans, spec.seed))
    return source, target


def _ground_truth(spec: BenchSpec):
    # perturb() draws its transform from the seed alone
    probe = PointCloud(np.zeros((1, 3)))
    return perturb(probe, PerturbationSpec(*spec.perturb, spec.seed))[1]


def run_one(source: PointCloud, target: PointCloud, method: str, spec: BenchSpec) -> BenchRow:
    cfg = spec.icp_config()
    row = BenchRow("", method, 0, len(source), len(target), _backend.active_backend(), spec.mode)
    t0 = time.perf_counter()
    if method == "dilation-icp":
        grid = build_grid(target, cfg.grid, spec.mode, spec.lanes)
        trace = IcpTrace(grid_seconds=dict(grid.stage_seconds))
        matcher = DilationMatcher(grid, cfg, spec.mode, spec.lanes)
        st = grid.stage_seconds
        row.voh_ms, row.moc_ms = st["VOH"] * 1e3, st["MOC"] * 1e3
        row.vdma_ms, row.ddma_ms = st["VDMA"] * 1e3, st["DDMA"] * 1e3
        mem = account(grid.offsets, cfg.grid, spec.baseline_block_bytes)
        row.static_bytes, row.dynamic_bytes = mem.static_bytes, mem.dynamic_bytes
        row.ours_bytes, row.baseline_bytes = mem.ours_total_bytes, mem.baseline_bytes
        row.saving_ratio = mem.saving_ratio
    elif method == "brute-icp":
        trace, matcher = IcpTrace(), BruteMatcher(target, spec.lanes if spec.mode == "parallel" else 1)
    else:
        trace, matcher = IcpTrace(), KdTreeMatcher(target, spec.lanes if spec.mode == "parallel" else 1)
    tf, trace = run_icp(source, target, cfg, matcher, trace)
    row.wall_s = time.perf_counter() - t0
    row.nns_ms = trace.nns_seconds * 1e3
    row.estimate_ms = trace.estimate_seconds * 1e3
    row.iterations = trace.iterations
    row.converged = trace.converged
    row.final_rmse = trace.final_rmse
    residual = tf.compose(_ground_truth(spec))
    row.rot_err_deg = residual.rotation_angle_deg()
    row.trans_err = float(np.linalg.norm(residual.translation))
    totals = trace.route_totals()
    row.local, row.redirected, row.global_fallback = (
        totals["local"], totals["redirected"], totals["global-fallback"])
    return row


def run_bench(spec: BenchSpec) -> list[BenchRow]:
    spec.validate()
    rows: list[BenchRow] = []
    if not spec.methods:
        return rows
    for dataset in spec.datasets:
        try:
            source, target = make_instance(dataset, spec)
        except Exception as exc:  # noqa: BLE001 - reported per row
            log.warning("dataset %s failed to load: %s", dataset, exc)
            for method in spec.methods:
                for rep in range(spec.repetitions):
                    rows.append(BenchRow(dataset, method, rep, status="load-error",
                                         error=f"{type(exc).__name__}: {exc}",
                                         backend=_backend.active_backend(), mode=spec.mode,
                                         seed=spec.seed))
            continue
        for method in spec.methods:
            for _ in range(spec.warmup):
                run_one(source, target, method, spec)
            for rep in range(spec.repetitions):
                row = run_one(source, target, method, spec)
                row.dataset, row.repetition = dataset, rep
                row.perturb_rot_deg, row.perturb_trans = spec.perturb
                row.seed = spec.seed
                rows.append(row)
                log.info("%s %s rep=%d iters=%s rmse=%.3e wall=%.3fs", dataset, method, rep,
                         row.iterations, row.final_rmse, row.wall_s)
    return rows


def manifest(spec: BenchSpec) -> dict:
    return {
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(spec).items()},
        "seed": spec.seed,
        "rng": RNG_NAME,
        "backend": _backend.active_backend(),
        "versions": {
            "voxreg": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "platform": platform.platform(),
        },
        "columns": COLUMNS,
    }


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def write_results(rows: list[BenchRow], spec: BenchSpec, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "results.csv", "jsonl": out / "results.jsonl", "manifest": out / "manifest.json"}
    with open(paths["csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_cell(getattr(r, c)) for c in COLUMNS])
    with open(paths["jsonl"], "w") as fh:
        for r in rows:
            fh.write(json.dumps(asdict(r)) + "\n")
    paths["manifest"].write_text(json.dumps(manifest(spec), indent=2) + "\n")
    return paths
