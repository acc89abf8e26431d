"""Command-line front end: ``ads sample|compare|ablate|mesh-opt|subsample``.

Exit codes: 0 success, 2 completed with an IterationCap warning, 1 error.
Outputs are staged in a hidden directory inside the output directory and
moved into place only when a command succeeds.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import tempfile
import warnings
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import fields as F
from .io import read_mesh, read_ply_points, write_mesh, write_ply_points
from .mesh import (SampleSet, SurfaceMesh, manifold_report, optimize_mesh, reject_subsample,
                   triangle_min_angles)
from .pipeline import AdsConfig, IterationCap, run

BUILTIN_FIELDS = {
    "sphere": lambda: F.sphere_field(0.6),
    "torus": lambda: F.torus_field(0.6, 0.25),
    "cube": lambda: F.cube_field(0.5),
}


class CliError(Exception):
    pass


def _workers():
    try:
        return ev.worker_count()
    except ValueError as exc:
        raise CliError(str(exc))


def load_field_spec(spec):
    """Field from ``builtin:<name>`` or a CSG JSON / OBJ / grid-header path."""
    if spec.startswith("builtin:"):
        name = spec.split(":", 1)[1]
        if name not in BUILTIN_FIELDS:
            raise CliError(f"unknown builtin field {name!r}; choose from {sorted(BUILTIN_FIELDS)}")
        return BUILTIN_FIELDS[name]()
    path = Path(spec)
    if not path.is_file():
        raise CliError(f"field file not found: {spec}")
    try:
        return F.load_field(path)
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot load field {spec}: {exc}")


# --------------------------------------------------------------------------
# config flags mirror AdsConfig field names

_FLAG_TYPES = {"tau": float, "initial_points": int, "search_tolerance": float,
               "barrier_offset_fraction": float, "normal_angle_threshold": float,
               "mesh_edge_min_length": float, "tet_edge_min_length": float,
               "refinement_rounds": int, "max_iterations": int, "seed": int}


def _add_config_flags(p):
    p.add_argument("--config", help="JSON file with AdsConfig fields")
    for name, typ in _FLAG_TYPES.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--barrier", dest="barrier", action="store_true", default=None)
    p.add_argument("--no-barrier", dest="barrier", action="store_false")


def config_from_args(args):
    base = {}
    if args.config:
        if not Path(args.config).is_file():
            raise CliError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            base = json.load(fh)
    for f in dc_fields(AdsConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            base[f.name] = val
    # derived defaults follow tau unless set explicitly
    try:
        return AdsConfig.from_dict(base)
    except (ValueError, TypeError) as exc:
        raise CliError(f"invalid configuration: {exc}")


# --------------------------------------------------------------------------
# output staging

class Staging:
    """Write into a hidden temp dir inside ``out``; commit moves files into ``out``."""

    def __init__(self, out):
        self.out = Path(out)
        self.created = not self.out.exists()
        self.out.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))

    def path(self, name):
        p = self.tmp / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def commit(self):
        for item in sorted(self.tmp.iterdir()):
            dest = self.out / item.name
            if dest.is_dir() and not dest.is_symlink():
                shutil.rmtree(dest)
            os.replace(item, dest)
        self.tmp.rmdir()

    def abort(self):
        shutil.rmtree(self.tmp, ignore_errors=True)
        if self.created:
            shutil.rmtree(self.out, ignore_errors=True)


def _json_default(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default)


def stats_document(field_spec, config, stats):
    """stats.json content; ``payload_sha256`` covers everything except timing."""
    payload = {"field": field_spec, "config": config.to_dict(),
               "stats": stats.to_dict(include_timing=False)}
    digest = hashlib.sha256(_dump(payload).encode()).hexdigest()
    return {**payload, "payload_sha256": digest,
            "timing": {"excludes_io": True, **stats.timing,
                       "iteration_wall_ms": [r.wall_ms for r in stats.iterations]}}


def _write_run(stage, prefix, field_spec, config, samples, mesh, stats, mesh_format):
    write_ply_points(stage.path(prefix + "samples.ply"), samples.points, samples.normals)
    write_mesh(stage.path(prefix + "mesh." + mesh_format), mesh)
    stage.path(prefix + "stats.json").write_text(_dump(stats_document(field_spec, config, stats)))
    ev.write_csv(ev.iteration_report(stats), ev.ITERATION_COLUMNS, stage.path(prefix + "iterations.csv"))


def _run_quiet(field, config):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IterationCap)
        return run(field, config)


# --------------------------------------------------------------------------
# commands

def cmd_sample(args):
    field = load_field_spec(args.field)
    config = config_from_args(args)
    stage = Staging(args.output)
    try:
        samples, mesh, stats = _run_quiet(field, config)
        _write_run(stage, "", args.field, config, samples, mesh, stats, args.mesh_format)
    except BaseException:
        stage.abort()
        raise
    stage.commit()
    print(f"{len(samples)} samples, {mesh.n_faces} triangles, {stats.evals} evals "
          f"({stats.evals_per_sample:.2f} per sample)")
    if stats.iteration_cap:
        print("warning: edge refinement hit max_iterations", file=sys.stderr)
        return 2
    return 0


def _reference(field, args):
    if getattr(args, "reference", None):
        if not Path(args.reference).is_file():
            raise CliError(f"reference file not found: {args.reference}")
        return ev.load_points(args.reference)
    return ev.reference_cloud(field, seed=args.seed or 0)


def cmd_compare(args):
    field = load_field_spec(args.field)
    methods = [m.strip().lower() for m in args.methods.split(",") if m.strip()]
    bad = set(methods) - {"ads", "mc", "rrs"}
    if bad or "ads" not in methods:
        raise CliError("--methods must include 'ads' and may add 'mc', 'rrs'")
    base = config_from_args(args)
    taus = [float(t) for t in args.taus.split(",")] if args.taus else [t for _, t in ev.ADS_RESOLUTIONS]
    names = [n for n, _ in ev.ADS_RESOLUTIONS] if len(taus) == 3 else [f"r{i}" for i in range(len(taus))]
    configs = []
    for name, tau in zip(names, taus):
        d = base.to_dict()
        d.update(tau=tau, search_tolerance=None, mesh_edge_min_length=None, tet_edge_min_length=None)
        for key in ("search_tolerance", "mesh_edge_min_length", "tet_edge_min_length"):
            if getattr(args, key, None) is not None:
                d[key] = getattr(args, key)
        configs.append((name, AdsConfig.from_dict(d)))
    stage = Staging(args.output)
    try:
        ref = _reference(field, args)
        rows = ev.comparison_table(field, configs, [m for m in methods if m != "ads"], ref,
                                   seed=base.seed)
        ev.write_table(rows, stage.path("comparison.csv"), stage.path("comparison.json"))
    except BaseException:
        stage.abort()
        raise
    stage.commit()
    for r in rows:
        ch = r["Chamfer x1000"]
        print(f"{r['Method']:4s} {r['Resolution']:24s} chamfer={'-' if ch is None else f'{ch:.3f}'} "
              f"evals={r['# Evals']}")
    return 0


def curvature_proxy(mesh):
    """Per-vertex max angle (degrees) between the vertex normal and incident face normals."""
    vn = mesh.vertex_normals()
    fn = mesh.face_normals()
    out = np.zeros(len(mesh.vertices))
    for k in range(3):
        vid = mesh.faces[:, k]
        ang = np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", vn[vid], fn), -1.0, 1.0)))
        np.maximum.at(out, vid, ang)
    return out


ABLATION_COLUMNS = ["variant", "barrier", "refinement_rounds", "samples", "evals",
                    "evals_per_sample", "clustering_fraction", "chamfer_x1000",
                    "high_curvature_samples", "flagged_edges"]


def cmd_ablate(args):
    field = load_field_spec(args.field)
    base = config_from_args(args)
    variants = [("barrier_on", True, base.refinement_rounds),
                ("barrier_off", False, base.refinement_rounds)]
    variants += [(f"rounds_{r}", base.barrier, r) for r in (0, 1, 2)]
    stage = Staging(args.output)
    rows = []
    try:
        ref = _reference(field, args)
        for name, barrier, rounds in variants:
            d = base.to_dict()
            d.update(barrier=barrier, refinement_rounds=rounds)
            cfg = AdsConfig.from_dict(d)
            before = field.eval_count
            samples, mesh, stats = _run_quiet(field, cfg)
            _write_run(stage, f"{name}/", args.field, cfg, samples, mesh, stats, args.mesh_format)
            curv = curvature_proxy(mesh) if mesh.n_faces else np.zeros(0)
            rows.append({
                "variant": name, "barrier": barrier, "refinement_rounds": rounds,
                "samples": len(samples), "evals": field.eval_count - before,
                "evals_per_sample": stats.evals_per_sample if len(samples) else None,
                "clustering_fraction": ev.clustering_fraction(samples.points, cfg.tau / 20),
                "chamfer_x1000": 1000 * ev.chamfer_l1(samples.points, ref) if len(samples) else None,
                "high_curvature_samples": int((curv >= cfg.normal_angle_threshold).sum()),
                "flagged_edges": stats.flagged_edges,
            })
        ev.write_csv(rows, ABLATION_COLUMNS, stage.path("ablation.csv"))
    except BaseException:
        stage.abort()
        raise
    stage.commit()
    for r in rows:
        print(f"{r['variant']:12s} samples={r['samples']} clustering={r['clustering_fraction']:.4f} "
              f"chamfer={r['chamfer_x1000']}")
    return 0


def cmd_mesh_opt(args):
    if not Path(args.mesh).is_file():
        raise CliError(f"mesh file not found: {args.mesh}")
    v, f = read_mesh(args.mesh)
    mesh = SurfaceMesh(v, f)
    stage = Staging(args.output)
    try:
        out = optimize_mesh(mesh, args.collapse_threshold, args.max_passes)
        name = "mesh_opt." + args.mesh_format
        write_mesh(stage.path(name), out)
        before, after = manifold_report(mesh), manifold_report(out)
        report = {
            "before": {**before._asdict(), "faces": mesh.n_faces,
                       "median_min_angle_deg": _median_angle(mesh)},
            "after": {**after._asdict(), "faces": out.n_faces,
                      "median_min_angle_deg": _median_angle(out)},
            "collapse_threshold": args.collapse_threshold, "max_passes": args.max_passes,
        }
        stage.path("mesh_opt.json").write_text(_dump(report))
    except BaseException:
        stage.abort()
        raise
    stage.commit()
    print(f"faces {mesh.n_faces} -> {out.n_faces}")
    return 0


def _median_angle(mesh):
    if mesh.n_faces == 0:
        return None
    return float(np.degrees(np.median(triangle_min_angles(mesh.vertices, mesh.faces))))


def distance_histogram(points, bins=50, max_radius=None):
    """Pairwise-distance histogram rows (count of point pairs per distance bin)."""
    from scipy.spatial import cKDTree

    tree = cKDTree(points)
    if max_radius is None:
        d, _ = tree.query(points, k=2, workers=_workers())
        max_radius = 10.0 * float(d[:, 1].mean())
    edges = np.linspace(0.0, max_radius, bins + 1)
    cum = tree.count_neighbors(tree, edges[1:]) - len(points)  # drop self pairs
    counts = np.diff(np.concatenate([[0], cum])) // 2
    return [{"r_lo": float(a), "r_hi": float(b), "pairs": int(c)}
            for a, b, c in zip(edges[:-1], edges[1:], counts)]


def cmd_subsample(args):
    if not Path(args.samples).is_file():
        raise CliError(f"samples file not found: {args.samples}")
    pts, nrm = read_ply_points(args.samples, with_normals=True)
    samples = SampleSet(pts, np.full((len(pts), 2), -1), nrm)
    if len(samples) == 0:
        raise CliError("empty sample set")
    stage = Staging(args.output)
    try:
        out = reject_subsample(samples, args.keep_fraction, args.seed)
        write_ply_points(stage.path("samples_subsampled.ply"), out.points, out.normals)
        ev.write_csv(distance_histogram(out.points), ["r_lo", "r_hi", "pairs"],
                     stage.path("distance_histogram.csv"))
        report = {"input": len(samples), "output": len(out), "keep_fraction": args.keep_fraction,
                  "min_nn_before": _min_nn(samples.points), "min_nn_after": _min_nn(out.points)}
        stage.path("subsample.json").write_text(_dump(report))
    except BaseException:
        stage.abort()
        raise
    stage.commit()
    print(f"{len(samples)} -> {len(out)} samples")
    return 0


def _min_nn(pts):
    if len(pts) < 2:
        return None
    from scipy.spatial import cKDTree

    d, _ = cKDTree(pts).query(pts, k=2, workers=_workers())
    return float(d[:, 1].min())


# --------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="ads", description="Adaptive Delaunay sampling of occupancy fields")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="run the sampling pipeline")
    s.add_argument("--field", required=True, help="CSG JSON, OBJ, grid header, or builtin:<name>")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--mesh-format", choices=("obj", "ply"), default="obj")
    _add_config_flags(s)
    s.set_defaults(func=cmd_sample)

    c = sub.add_parser("compare", help="ADS vs matched marching cubes / ray stabbing")
    c.add_argument("--field", required=True)
    c.add_argument("-o", "--output", required=True)
    c.add_argument("--methods", default="ads,mc,rrs")
    c.add_argument("--taus", help="comma-separated tau list (default 0.05,0.03,0.02)")
    c.add_argument("--reference", help="reference points (PLY or xyz) instead of a generated cloud")
    _add_config_flags(c)
    c.set_defaults(func=cmd_compare)

    a = sub.add_parser("ablate", help="barrier on/off and refinement-round variants")
    a.add_argument("--field", required=True)
    a.add_argument("-o", "--output", required=True)
    a.add_argument("--reference")
    a.add_argument("--mesh-format", choices=("obj", "ply"), default="obj")
    _add_config_flags(a)
    a.set_defaults(func=cmd_ablate)

    m = sub.add_parser("mesh-opt", help="collapse/flip optimization without evaluations")
    m.add_argument("--mesh", required=True)
    m.add_argument("-o", "--output", required=True)
    m.add_argument("--collapse-threshold", type=float, required=True)
    m.add_argument("--max-passes", type=int, default=3)
    m.add_argument("--mesh-format", choices=("obj", "ply"), default="obj")
    m.set_defaults(func=cmd_mesh_opt)

    r = sub.add_parser("subsample", help="greedy rejection subsampling of a point set")
    r.add_argument("--samples", required=True)
    r.add_argument("-o", "--output", required=True)
    r.add_argument("--keep-fraction", type=float, required=True)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_subsample)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _workers()
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - all failures map to exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
