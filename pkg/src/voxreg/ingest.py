"""Point cloud loading, unit-sphere normalization, perturbation and synthesis.

Formats (all ASCII):

* XYZ: one point per line, >= 3 whitespace-separated reals, extra columns
  ignored, ``#`` starts a comment, blank lines skipped.
* PLY 1.0 ascii: ``vertex`` element with ``x``, ``y``, ``z`` properties.
  Other elements (faces, ...) are skipped; list properties are allowed on
  non-vertex elements only.
* OFF: ``OFF`` magic, then ``nv nf ne`` counts, then ``nv`` vertex lines.
  The counts may share the magic line (``OFF 4 4 6``). Faces are ignored.

Random draws use numpy's PCG64 generator seeded explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    DegenerateInputError,
    InputError,
    ParseError,
    PointCloud,
    RigidTransform,
    UnsupportedFormatError,
)

RNG_NAME = "numpy.PCG64"
SYNTHETIC_KINDS = ("sphere-surface", "box-volume", "two-density-cluster")


@dataclass(frozen=True)
class PerturbationSpec:
    max_rotation_deg: float = 25.0
    max_translation: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.max_rotation_deg <= 180:
            raise InputError(f"max_rotation_deg must be in [0, 180], got {self.max_rotation_deg}")
        if self.max_translation < 0:
            raise InputError(f"max_translation must be >= 0, got {self.max_translation}")
        if self.seed < 0:
            raise InputError("seed must be non-negative")


def _read_lines(path) -> list[str]:
    try:
        return Path(path).read_text().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc


def _parse_xyz_row(tokens: list[str], lineno: int) -> tuple[float, float, float]:
    if len(tokens) < 3:
        raise ParseError(f"expected 3 coordinates, got {len(tokens)}", lineno)
    try:
        x, y, z = (float(t) for t in tokens[:3])
    except ValueError:
        raise ParseError(f"non-numeric coordinate in {' '.join(tokens[:3])!r}", lineno) from None
    if not all(math.isfinite(c) for c in (x, y, z)):
        raise ParseError("non-finite coordinate", lineno)
    return x, y, z


def _cloud(rows, name: str) -> PointCloud:
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3), name=name)


def load_xyz(path) -> PointCloud:
    rows = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        body = line.split("#", 1)[0].split()
        if body:
            rows.append(_parse_xyz_row(body, lineno))
    return _cloud(rows, Path(path).stem)


def load_ply_ascii(path) -> PointCloud:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    if not raw.startswith(b"ply"):
        raise ParseError("missing 'ply' magic", 1)
    head_end = raw.find(b"end_header")
    if head_end < 0:
        raise ParseError("missing end_header")
    header = raw[:head_end].decode("ascii", errors="replace").splitlines()
    elements: list[tuple[str, int, list[tuple[str, bool]]]] = []
    for lineno, line in enumerate(header, start=1):
        tok = line.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise UnsupportedFormatError(f"only ascii PLY is supported, got {' '.join(tok[1:])!r}")
        elif tok[0] == "element":
            try:
                elements.append((tok[1], int(tok[2]), []))
            except (IndexError, ValueError):
                raise ParseError(f"bad element line {line!r}", lineno) from None
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before any element", lineno)
            is_list = len(tok) > 1 and tok[1] == "list"
            elements[-1][2].append((tok[-1], is_list))
    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise ParseError("no vertex element")
    names = [n for n, _ in vertex[2]]
    missing = [c for c in ("x", "y", "z") if c not in names]
    if missing:
        raise ParseError(f"vertex element lacks properties {missing}")
    if any(is_list for _, is_list in vertex[2]):
        raise ParseError("list properties on vertices are not supported")
    cols = [names.index(c) for c in ("x", "y", "z")]

    body = raw[head_end:].decode("ascii", errors="replace").splitlines()[1:]
    first_body_line = len(header) + 2
    lines = [(i + first_body_line, ln.split()) for i, ln in enumerate(body)]
    lines = [(i, t) for i, t in lines if t]
    pos = 0
    rows = []
    for name, count, props in elements:
        if pos + count > len(lines):
            raise ParseError(f"truncated: element {name!r} declares {count} rows, "
                             f"{len(lines) - pos} remain")
        if name == "vertex":
            for lineno, tok in lines[pos:pos + count]:
                if len(tok) < len(props):
                    raise ParseError(f"expected {len(props)} values, got {len(tok)}", lineno)
                rows.append(_parse_xyz_row([tok[c] for c in cols], lineno))
        pos += count
    return _cloud(rows, Path(path).stem)


def load_off(path) -> PointCloud:
    lines = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        tok = line.split("#", 1)[0].split()
        if tok:
            lines.append((lineno, tok))
    if not lines or not lines[0][1][0].endswith("OFF"):
        raise ParseError("missing OFF magic", lines[0][0] if lines else 1)
    lineno, tok = lines[0]
    if tok[0] != "OFF":
        raise UnsupportedFormatError(f"OFF variant {tok[0]!r} is not supported")
    if len(tok) > 1:
        counts, rest = tok[1:], lines[1:]
    elif len(lines) > 1:
        lineno, counts = lines[1]
        rest = lines[2:]
    else:
        counts, rest = [], []
    try:
        n_vertices = int(counts[0])
    except (IndexError, ValueError):
        raise ParseError("missing vertex/face counts", lineno) from None
    if len(rest) < n_vertices:
        raise ParseError(f"truncated: {n_vertices} vertices declared, {len(rest)} present")
    rows = [_parse_xyz_row(t, ln) for ln, t in rest[:n_vertices]]
    return _cloud(rows, Path(path).stem)


def load_cloud(path) -> PointCloud:
    """Dispatch on file extension (.xyz/.txt, .ply, .off)."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {p}")
    ext = p.suffix.lower()
    if ext == ".ply":
        return load_ply_ascii(p)
    if ext == ".off":
        return load_off(p)
    if ext in (".xyz", ".txt", ".pts", ""):
        return load_xyz(p)
    raise UnsupportedFormatError(f"unknown point cloud extension {ext!r}")


def write_xyz(cloud: PointCloud, path) -> None:
    with open(path, "w") as fh:
        for x, y, z in cloud.points:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")


def normalization_params(cloud: PointCloud) -> tuple[np.ndarray, float]:
    if len(cloud) == 0:
        raise InputError("cannot normalize an empty cloud")
    centroid = cloud.points.mean(axis=0)
    radius = float(np.sqrt(((cloud.points - centroid) ** 2).sum(axis=1)).max())
    if radius == 0.0:
        raise DegenerateInputError("all points coincide; radius is zero")
    return centroid, radius


def apply_normalization(cloud: PointCloud, centroid, radius: float) -> PointCloud:
    return PointCloud((cloud.points - centroid) / radius, name=cloud.name)


def normalize_unit_sphere(cloud: PointCloud) -> PointCloud:
    centroid, radius = normalization_params(cloud)
    return apply_normalization(cloud, centroid, radius)


def rotation_about_axis(axis, angle_rad: float) -> np.ndarray:
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle_rad) * kx + (1.0 - math.cos(angle_rad)) * (kx @ kx)


def random_rigid_transform(rng: np.random.Generator, max_rotation_deg: float,
                           max_translation: float) -> RigidTransform:
    axis = rng.normal(size=3)
    while np.linalg.norm(axis) < 1e-12:
        axis = rng.normal(size=3)
    angle = math.radians(rng.uniform(0.0, max_rotation_deg))
    t = rng.uniform(-max_translation, max_translation, size=3)
    return RigidTransform(rotation_about_axis(axis, angle), t)


def perturb(cloud: PointCloud, spec: PerturbationSpec) -> tuple[PointCloud, RigidTransform]:
    if len(cloud) == 0:
        raise InputError("cannot perturb an empty cloud")
    if spec.max_rotation_deg == 0 and spec.max_translation == 0:
        return PointCloud(cloud.points.copy(), name=cloud.name), RigidTransform.identity()
    rng = np.random.default_rng(spec.seed)
    tf = random_rigid_transform(rng, spec.max_rotation_deg, spec.max_translation)
    return PointCloud(tf.apply(cloud.points), name=f"{cloud.name}~perturbed"), tf


def _uniform_ball(rng, count: int, radius: float) -> np.ndarray:
    d = rng.normal(size=(count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(0.0, 1.0, size=(count, 1)) ** (1.0 / 3.0)
    return d * r


def gen_synthetic(kind: str, count: int, seed: int = 0) -> PointCloud:
    """Seeded synthetic cloud with exactly ``count`` points inside the unit sphere.

    ``two-density-cluster`` puts 80% of the points in a small ball (radius
    0.15) and the rest in a flat slab, giving well over an order of magnitude
    of density contrast and no rotational symmetry.
    """
    if count < 1:
        raise InputError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    if kind == "sphere-surface":
        pts = rng.normal(size=(count, 3))
        norms = np.linalg.norm(pts, axis=1, keepdims=True)
        while np.any(norms < 1e-12):
            bad = norms[:, 0] < 1e-12
            pts[bad] = rng.normal(size=(int(bad.sum()), 3))
            norms = np.linalg.norm(pts, axis=1, keepdims=True)
        pts = pts / norms
    elif kind == "box-volume":
        # anisotropic box so registration has a unique answer
        half = np.array([0.75, 0.5, 0.3])
        pts = rng.uniform(-1.0, 1.0, size=(count, 3)) * half
    elif kind == "two-density-cluster":
        n_dense = int(round(0.8 * count))
        dense = _uniform_ball(rng, n_dense, 0.15) + np.array([-0.45, 0.2, 0.0])
        sparse = rng.uniform(-1.0, 1.0, size=(count - n_dense, 3)) * np.array([0.3, 0.45, 0.15])
        sparse += np.array([0.35, -0.1, 0.05])
        pts = np.concatenate([dense, sparse])
    else:
        raise InputError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    return PointCloud(pts, name=f"{kind}-{count}-s{seed}")
