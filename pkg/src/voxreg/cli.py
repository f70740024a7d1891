"""``voxreg`` command line: register, bench, gen, memreport.

Exit codes: 0 success (register: converged), 2 register did not converge,
1 any error including bad flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _backend
from .bench import parse_spec, run_bench, write_results
from .core import GridConfig, PointCloud, VoxregError
from .dilation import dump_tags_csv
from .icp import DilationMatcher, IcpConfig, IcpTrace, run_icp
from .ingest import (
    SYNTHETIC_KINDS,
    PerturbationSpec,
    apply_normalization,
    gen_synthetic,
    load_cloud,
    normalization_params,
    perturb,
    write_xyz,
)
from .memmodel import DEFAULT_BASELINE_BLOCK_BYTES, account
from .voxelgrid import MODES, build_grid, dump_arena_hex

log = logging.getLogger("voxreg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _pair(text: str) -> tuple[float, float]:
    try:
        rot, trans = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected ROT_DEG,TRANS") from None
    return rot, trans


def _grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-bits", type=int, default=4, help="voxels per axis = 2**n (1..5)")
    p.add_argument("--layers", type=int, default=10, help="dilation layers")


def _exec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODES, default="serial")
    p.add_argument("--lanes", type=int, default=None,
                   help="parallel lane cap (default: $VOXREG_LANES or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="voxreg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("register", help="register source onto target")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    _grid_flags(p)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--rmse-delta", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb", type=_pair, default=None, metavar="ROT,TRANS",
                   help="perturb the source before registering")
    _exec_flags(p)
    p.add_argument("--out", default="voxreg_out")
    p.add_argument("--baseline-mb", type=float, default=None)
    p.add_argument("--dump-arena", default=None, metavar="PATH", help="hex listing of the arena")
    p.add_argument("--dump-tags", default=None, metavar="PATH", help="(index, root) CSV of tags")

    p = sub.add_parser("bench", help="run a benchmark spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", help="write into a non-empty --out")
    _exec_flags(p)

    p = sub.add_parser("gen", help="write a synthetic cloud as XYZ")
    p.add_argument("--kind", choices=SYNTHETIC_KINDS, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("memreport", help="build the grid only and report memory")
    p.add_argument("--cloud", required=True)
    _grid_flags(p)
    p.add_argument("--baseline-block-bytes", type=int, default=DEFAULT_BASELINE_BLOCK_BYTES)
    p.add_argument("--baseline-mb", type=float, default=None, help="override the baseline total")
    p.add_argument("--ours-mb", type=float, default=None, help="override our total (replay)")
    p.add_argument("--json", action="store_true")
    _exec_flags(p)
    p.add_argument("--dump-arena", default=None, metavar="PATH")
    p.add_argument("--dump-tags", default=None, metavar="PATH")
    return parser


def _dumps(grid, args) -> None:
    if args.dump_arena:
        with open(args.dump_arena, "w") as fh:
            dump_arena_hex(grid, fh)
    if args.dump_tags:
        with open(args.dump_tags, "w") as fh:
            dump_tags_csv(grid.arena, grid.offsets, fh)


def _lanes(args) -> int:
    return args.lanes if args.lanes else _backend.default_lanes()


def cmd_register(args) -> int:
    cfg = IcpConfig(GridConfig(args.n_bits, args.layers), args.max_iters, args.rmse_delta)
    raw_source = load_cloud(args.source)
    raw_target = load_cloud(args.target)
    centroid, radius = normalization_params(raw_target)
    target = apply_normalization(raw_target, centroid, radius)
    source = apply_normalization(raw_source, centroid, radius)
    if args.perturb is not None:
        source, _ = perturb(source, PerturbationSpec(args.perturb[0], args.perturb[1], args.seed))
    lanes = _lanes(args)
    grid = build_grid(target, cfg.grid, args.mode, lanes)
    trace = IcpTrace(grid_seconds=dict(grid.stage_seconds))
    tf, trace = run_icp(source, target, cfg, DilationMatcher(grid, cfg, args.mode, lanes), trace)
    mem = account(grid.offsets, cfg.grid, baseline_mb=args.baseline_mb)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # transform is expressed in the target's normalized frame
    np.savetxt(out / "transform.txt", tf.as_matrix(), fmt="%.17g")
    with open(out / "trace.csv", "w") as fh:
        trace.to_csv(fh)
    report = mem.as_dict()
    report["normalization"] = {"centroid": centroid.tolist(), "radius": radius}
    (out / "memreport.json").write_text(json.dumps(report, indent=2) + "\n")
    _dumps(grid, args)
    print(f"converged={str(trace.converged).lower()} iters={trace.iterations} "
          f"rmse={trace.final_rmse:.6e} mem_ours={mem.ours_mb:.6f} "
          f"saving={100 * mem.saving_ratio:.2f}%")
    return 0 if trace.converged else 2


def cmd_bench(args) -> int:
    spec_path = Path(args.spec)
    if not spec_path.exists():
        raise FileNotFoundError(f"no such file: {spec_path}")
    spec = parse_spec(spec_path.read_text(), base_dir=spec_path.parent)
    if args.mode != "serial":
        spec.mode = args.mode
    if args.lanes:
        spec.lanes = args.lanes
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"output directory {out} is not empty (use --force)")
    rows = run_bench(spec)
    paths = write_results(rows, spec, out)
    print(f"{len(rows)} rows -> {paths['csv']}")
    return 0


def cmd_gen(args) -> int:
    cloud = gen_synthetic(args.kind, args.count, args.seed)
    write_xyz(cloud, args.out)
    return 0


def cmd_memreport(args) -> int:
    cfg = GridConfig(args.n_bits, args.layers)
    cloud = load_cloud(args.cloud)
    if len(cloud):
        cloud = apply_normalization(cloud, *normalization_params(cloud))
    else:
        cloud = PointCloud(np.zeros((0, 3)), name=cloud.name)
    grid = build_grid(cloud, cfg, args.mode, _lanes(args))
    mem = account(grid.offsets, cfg, args.baseline_block_bytes,
                  baseline_mb=args.baseline_mb, ours_mb=args.ours_mb)
    _dumps(grid, args)
    if args.json:
        print(json.dumps(mem.as_dict()))
    else:
        print(f"points={len(cloud)} n_bits={cfg.n_bits} total_slots={mem.total_slots}")
        print(f"static={mem.static_mb:.6f} MB dynamic={mem.dynamic_bytes / (1 << 20):.6f} MB "
              f"ours_total={mem.ours_mb:.6f} MB")
        print(f"baseline={mem.baseline_mb:.6f} MB saving={100 * mem.saving_ratio:.2f}%")
        print(f"moc_ms={grid.stage_seconds['MOC'] * 1e3:.3f}")
    return 0


COMMANDS = {"register": cmd_register, "bench": cmd_bench, "gen": cmd_gen, "memreport": cmd_memreport}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"voxreg: error: {exc}", file=sys.stderr)
        return 1
    except (VoxregError, OSError, ValueError) as exc:
        print(f"voxreg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
