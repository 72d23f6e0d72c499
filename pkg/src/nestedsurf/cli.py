"""Command line front end exposing each pipeline stage as a subcommand.

Every stage reads files and writes files, so a full run can be composed
from single invocations or executed in one pass with the pipeline
subcommand; both routes produce byte-identical results.  Reports go to
standard output, progress notes and errors to standard error.  Exit
codes: 0 success, 1 usage error, 2 data or validation error.
"""

import argparse
import dataclasses
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .grid import read_volume, write_volume
from .lme import (CRITERIA, fit_lme, read_cohort_csv, report_table,
                  write_report_csv, write_trajectory_csv)
from .mesher import marching_cubes, mesh_diagnostics, read_mesh, write_mesh
from .metrics import (curvature_gradient, gaussian_curvature, median_cg,
                      read_point_set, surface_distance, write_curvature_csv,
                      write_point_distances)
from .phantom import generate, read_phantom_spec
from .sdf import (LAYER_NAMES, NestedSdfSet, SdfVolume, check_nesting,
                  enforce_nesting, read_layer_set, reinitialize_sdf,
                  signed_distance_from_mask, write_layer_set)
from .volumetry import (ICV_SURFACES, VOLUME_CSV_HEADER, VolumeReport,
                        enclosed_volume, measure_nested, volume_csv_row)

_SEX_CHOICES = ("0", "1", "f", "m", "female", "male")


@dataclass(frozen=True)
class PipelineConfig:
    """Validated settings for a one-pass pipeline run."""

    manifest_path: str
    out_dir: str
    iso: float = 0.0
    reinitialize: bool = False
    icv_surface: str = "epidural"
    threads: int = 1

    def __post_init__(self):
        if not os.path.isfile(self.manifest_path):
            raise ValueError(f"manifest not found: {self.manifest_path}")
        if not math.isfinite(self.iso):
            raise ValueError("iso level must be finite")
        if self.icv_surface not in ICV_SURFACES:
            raise ValueError(f"icv surface must be one of {ICV_SURFACES}")
        if self.threads < 1:
            raise ValueError("thread count must be at least 1")


def _note(message: str) -> None:
    print(message, file=sys.stderr)


def _thread_count(flag_value) -> int:
    """Resolve the worker count: flag, then environment, then all cores."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get("NESTEDSURF_THREADS")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(
                f"NESTEDSURF_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _load_layers(manifest_path: str, reinitialize: bool) -> NestedSdfSet:
    layers = read_layer_set(manifest_path)
    if reinitialize:
        layers = NestedSdfSet(*(reinitialize_sdf(f) for f in layers.layers()))
    return layers


def _cmd_phantom(args) -> int:
    spec = read_phantom_spec(args.spec)
    if args.seed is not None:
        if spec.corruption is None:
            raise ValueError(
                "--seed overrides the corruption seed, but the spec file "
                "defines no corruption")
        cor = dataclasses.replace(spec.corruption, seed=args.seed)
        spec = dataclasses.replace(spec, corruption=cor)
    out = generate(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    if isinstance(out, NestedSdfSet):
        path = write_layer_set(out, os.path.join(args.out_dir, "nested.manifest"))
    else:
        path = write_volume(out.grid, os.path.join(args.out_dir, "phantom.mhd"))
    _note(f"wrote {path}")
    return 0


def _cmd_sdf(args) -> int:
    field = signed_distance_from_mask(read_volume(args.mask))
    write_volume(field.grid, args.out)
    _note(f"wrote {args.out}")
    return 0


def _cmd_nest(args) -> int:
    vols = [SdfVolume(read_volume(p))
            for p in (args.pia, args.arachnoid, args.epidural)]
    if args.reinit:
        vols = [reinitialize_sdf(v) for v in vols]
    before = check_nesting(NestedSdfSet(*vols))
    enforced = enforce_nesting(*vols)
    after = check_nesting(enforced)
    write_layer_set(enforced, args.out_manifest)
    print(f"arachnoid_violations_before={before.arachnoid_violations}")
    print(f"epidural_violations_before={before.epidural_violations}")
    print(f"arachnoid_violations_after={after.arachnoid_violations}")
    print(f"epidural_violations_after={after.epidural_violations}")
    _note(f"wrote {args.out_manifest}")
    return 0


def _cmd_mesh(args) -> int:
    field = SdfVolume(read_volume(args.sdf))
    if args.reinit:
        field = reinitialize_sdf(field)
    mesh = marching_cubes(field, args.iso)
    write_mesh(mesh, args.out)
    d = mesh_diagnostics(mesh)
    _note(f"wrote {args.out}: {d.vertex_count} vertices, "
          f"{d.triangle_count} triangles, euler {d.euler_characteristic}, "
          f"{d.boundary_edge_count} boundary edges")
    return 0


def _cmd_metrics(args) -> int:
    mesh = read_mesh(args.mesh)
    field = curvature_gradient(mesh, gaussian_curvature(mesh))
    if args.curvature_csv:
        write_curvature_csv(field, args.curvature_csv)
        _note(f"wrote {args.curvature_csv}")
    print(f"median_cg={median_cg(field)!r}")
    if args.points:
        points = read_point_set(args.points)
        result = surface_distance(points, mesh)
        if args.distances_csv:
            write_point_distances(points, result, args.distances_csv)
            _note(f"wrote {args.distances_csv}")
        print(f"surface_distance_mean_mm={result.mean!r}")
        print(f"surface_distance_std_mm={result.std!r}")
    return 0


def _require_clean(layers: NestedSdfSet) -> None:
    report = check_nesting(layers)
    if not report.clean:
        total = report.arachnoid_violations + report.epidural_violations
        raise ValueError(
            f"layer set violates nesting at {total} voxels; run nest first")


def _subject_row(args, report: VolumeReport) -> str:
    return volume_csv_row(report, args.subject_id, args.visit_index,
                          args.interval_years, args.sex, args.baseline_age)


def _cmd_volume(args) -> int:
    layers = read_layer_set(args.manifest)
    _require_clean(layers)
    report = measure_nested(layers, args.icv_surface)
    text = VOLUME_CSV_HEADER + "\n" + _subject_row(args, report) + "\n"
    if args.out_csv:
        with open(args.out_csv, "w", newline="") as fh:
            fh.write(text)
        _note(f"wrote {args.out_csv}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_lme(args) -> int:
    table = read_cohort_csv(args.cohort)
    fit_icv = fit_lme(table, "icv", args.criterion)
    fit_sas = fit_lme(table, "sas", args.criterion)
    print(report_table(fit_icv, fit_sas, args.alpha))
    if args.report_csv:
        write_report_csv(fit_icv, fit_sas, args.report_csv, args.alpha)
        _note(f"wrote {args.report_csv}")
    if args.trajectory_csv_icv:
        write_trajectory_csv(table, fit_icv, args.trajectory_csv_icv)
        _note(f"wrote {args.trajectory_csv_icv}")
    if args.trajectory_csv_sas:
        write_trajectory_csv(table, fit_sas, args.trajectory_csv_sas)
        _note(f"wrote {args.trajectory_csv_sas}")
    return 0


def _cmd_pipeline(args) -> int:
    config = PipelineConfig(manifest_path=args.manifest, out_dir=args.out_dir,
                            iso=args.iso, reinitialize=args.reinit,
                            icv_surface=args.icv_surface,
                            threads=_thread_count(args.threads))
    layers = _load_layers(config.manifest_path, config.reinitialize)
    before = check_nesting(layers)
    if not before.clean:
        _note(f"enforcing nesting: {before.arachnoid_violations} arachnoid "
              f"and {before.epidural_violations} epidural violations")
    enforced = enforce_nesting(*layers.layers())
    os.makedirs(config.out_dir, exist_ok=True)
    # One worker per layer at most; results are collected in layer order,
    # so the thread count can never reorder or change any output byte.
    with ThreadPoolExecutor(max_workers=min(config.threads, 3)) as pool:
        meshes = list(pool.map(lambda f: marching_cubes(f, config.iso),
                               enforced.layers()))
    for name, mesh in zip(LAYER_NAMES, meshes):
        path = write_mesh(mesh, os.path.join(config.out_dir, f"{name}.obj"))
        _note(f"wrote {path}")
    # Same arithmetic and order as measure_nested so the separate volume
    # subcommand yields byte-identical CSV output.
    pia, ara, epi = (enclosed_volume(m) / 1000.0 for m in meshes)
    icv = epi if config.icv_surface == "epidural" else ara
    report = VolumeReport(icv_cm3=icv, sas_cm3=ara - pia,
                          pia_cm3=pia, ara_cm3=ara, epi_cm3=epi)
    csv_path = os.path.join(config.out_dir, "volumes.csv")
    with open(csv_path, "w", newline="") as fh:
        fh.write(VOLUME_CSV_HEADER + "\n" + _subject_row(args, report) + "\n")
    _note(f"wrote {csv_path}")
    return 0


_HANDLERS = {
    "phantom": _cmd_phantom,
    "sdf": _cmd_sdf,
    "nest": _cmd_nest,
    "mesh": _cmd_mesh,
    "metrics": _cmd_metrics,
    "volume": _cmd_volume,
    "lme": _cmd_lme,
    "pipeline": _cmd_pipeline,
}


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits 1 on usage errors instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_subject_flags(sub) -> None:
    sub.add_argument("--subject-id", default="subject",
                     help="subject label for the CSV row")
    sub.add_argument("--visit-index", type=int, default=0)
    sub.add_argument("--interval-years", type=float, default=0.0)
    sub.add_argument("--sex", choices=_SEX_CHOICES, default="0")
    sub.add_argument("--baseline-age", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nestedsurf",
                     description="nested meningeal surface pipeline")
    subs = parser.add_subparsers(dest="command", required=True,
                                 parser_class=_Parser)

    p = subs.add_parser("phantom", help="generate analytic phantom volumes")
    p.add_argument("--spec", required=True, help="phantom spec file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the corruption seed from the spec file")

    p = subs.add_parser("sdf", help="signed distance field from a binary mask")
    p.add_argument("--mask", required=True, help="binary mask volume (.mhd)")
    p.add_argument("--out", required=True, help="output volume (.mhd)")

    p = subs.add_parser("nest", help="enforce the layer ordering on three fields")
    p.add_argument("--pia", required=True)
    p.add_argument("--arachnoid", required=True)
    p.add_argument("--epidural", required=True)
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--reinit", action="store_true",
                   help="reinitialize inputs to true distances before enforcing")

    p = subs.add_parser("mesh", help="extract an isosurface mesh from a field")
    p.add_argument("--sdf", required=True, help="field volume (.mhd)")
    p.add_argument("--out", required=True, help="output mesh (.obj or .ply)")
    p.add_argument("--iso", type=float, default=0.0)
    p.add_argument("--reinit", action="store_true")

    p = subs.add_parser("metrics", help="curvature and surface distance metrics")
    p.add_argument("--mesh", required=True)
    p.add_argument("--curvature-csv", default=None)
    p.add_argument("--points", default=None, help="point CSV with header id,x,y,z")
    p.add_argument("--distances-csv", default=None)

    p = subs.add_parser("volume", help="enclosed volumes of a nested layer set")
    p.add_argument("--manifest", required=True)
    p.add_argument("--icv-surface", choices=ICV_SURFACES, default="epidural")
    p.add_argument("--out-csv", default=None,
                   help="write the CSV here instead of standard output")
    _add_subject_flags(p)

    p = subs.add_parser("lme", help="longitudinal mixed-effects fits and report")
    p.add_argument("--cohort", required=True, help="cohort volume CSV")
    p.add_argument("--criterion", choices=CRITERIA, default="reml")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--report-csv", default=None)
    p.add_argument("--trajectory-csv-icv", default=None)
    p.add_argument("--trajectory-csv-sas", default=None)

    p = subs.add_parser("pipeline",
                        help="manifest to meshes and volumes in one pass")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--iso", type=float, default=0.0)
    p.add_argument("--reinit", action="store_true")
    p.add_argument("--icv-surface", choices=ICV_SURFACES, default="epidural")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads; NESTEDSURF_THREADS, then all cores")
    _add_subject_flags(p)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "metrics" and args.distances_csv and not args.points:
        parser.error("--distances-csv needs --points")
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
