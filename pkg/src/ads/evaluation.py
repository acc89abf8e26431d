"""Accuracy and efficiency metrics: chamfer distance, reference clouds, tables."""
from __future__ import annotations

import copy
import csv
import json
import os
import time

import numpy as np
from scipy.spatial import cKDTree

from . import fields as F
from .baselines import Unreachable, match_accuracy
from .pipeline import AdsConfig, run

ANALYTIC_REFERENCE_SIZE = 100_000
MESH_REFERENCE_SIZE = 500_000

TABLE_COLUMNS = ["Method", "Resolution", "Chamfer x1000", "# Output Samples", "# Evals", "Time"]

ADS_RESOLUTIONS = (("low", 0.05), ("medium", 0.03), ("high", 0.02))


class EmptySet(ValueError):
    """A chamfer operand has no points."""


def worker_count():
    """Worker cap from the ADS_THREADS environment variable (default: CPU count)."""
    val = os.environ.get("ADS_THREADS")
    if val:
        try:
            return max(1, int(val))
        except ValueError:
            raise ValueError(f"ADS_THREADS must be an integer, got {val!r}") from None
    return os.cpu_count() or 1


def nearest_distances(query, points):
    """Euclidean distance from each query point to its nearest neighbour in ``points``."""
    d, _ = cKDTree(points).query(query, k=1, workers=worker_count())
    return d


def chamfer_l1(a, b):
    """Symmetric mean nearest-neighbour distance (multiply by 1000 for tables)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EmptySet("chamfer distance of an empty point set")
    return 0.5 * (nearest_distances(a, b).mean() + nearest_distances(b, a).mean())


# --------------------------------------------------------------------------
# reference clouds

def _compose(outer, inner):
    """Transform applying ``inner`` first, then ``outer`` (3x4 each, None = identity)."""
    if outer is None:
        return inner
    if inner is None:
        return outer
    rot = outer[:, :3] @ inner[:, :3]
    return np.column_stack([rot, outer[:, :3] @ inner[:, 3] + outer[:, 3]])


def _leaves(node, xf=None):
    xf = _compose(xf, node.transform)
    if isinstance(node, F._Boolean):
        for c in node.children:
            yield from _leaves(c, xf)
    else:
        yield node, xf


def _sample_leaf(node, n, rng, domain):
    """(points, area) with points area-uniform on the primitive's surface (local frame)."""
    if isinstance(node, F.Sphere):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return node.center + node.radius * v, 4 * np.pi * node.radius ** 2
    if isinstance(node, F.Torus):
        R, r = node.major_radius, node.minor_radius
        out = np.empty((0, 3))
        while len(out) < n:
            m = 2 * (n - len(out)) + 16
            u = rng.uniform(0, 2 * np.pi, m)
            v = rng.uniform(0, 2 * np.pi, m)
            acc = rng.uniform(0, R + r, m) < R + r * np.cos(v)
            u, v = u[acc], v[acc]
            ring = R + r * np.cos(v)
            out = np.vstack([out, np.column_stack([ring * np.cos(u), ring * np.sin(u), r * np.sin(v)])])
        return node.center + out[:n], 4 * np.pi ** 2 * R * r
    if isinstance(node, F.Box):
        h = node.half_extents
        areas = 4 * np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
        probs = np.repeat(areas, 2) / (2 * areas.sum())
        face = rng.choice(6, size=n, p=probs)
        p = rng.uniform(-1, 1, size=(n, 3)) * h
        ax = face // 2
        p[np.arange(n), ax] = np.where(face % 2 == 0, -1.0, 1.0) * h[ax]
        return node.center + p, 2 * areas.sum()
    if isinstance(node, F.Plane):
        # the plane patch inside the domain's circumscribed disc
        lo, hi = domain
        c = 0.5 * (lo + hi)
        rad = 0.5 * np.linalg.norm(hi - lo)
        nrm = node.normal
        foot = c - (c @ nrm - node.offset) * nrm
        t1 = np.cross(nrm, [1.0, 0.0, 0.0] if abs(nrm[0]) < 0.9 else [0.0, 1.0, 0.0])
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(nrm, t1)
        rr = rad * np.sqrt(rng.uniform(0, 1, n))
        th = rng.uniform(0, 2 * np.pi, n)
        return foot + (rr * np.cos(th))[:, None] * t1 + (rr * np.sin(th))[:, None] * t2, np.pi * rad ** 2
    raise F.Unsupported(f"no surface sampler for {type(node).__name__}")


def _apply(xf, p):
    return p if xf is None else p @ xf[:, :3].T + xf[:, 3]


def analytic_reference(field, n=ANALYTIC_REFERENCE_SIZE, seed=0):
    """Area-uniform points on the surface of a CSG field, clipped to its domain.

    Each primitive's surface is sampled in closed form in proportion to its
    area; points not on the composite surface are discarded.
    """
    rng = np.random.default_rng(seed)
    leaves = list(_leaves(field.root))
    lo, hi = field.domain
    scale = float(np.linalg.norm(hi - lo))
    kept = np.empty((0, 3))
    batch = n
    for _ in range(64):
        areas = np.array([_sample_leaf(node, 1, rng, field.domain)[1] for node, _ in leaves])
        counts = rng.multinomial(batch, areas / areas.sum())
        parts = [_apply(xf, _sample_leaf(node, int(c), rng, field.domain)[0])
                 for (node, xf), c in zip(leaves, counts) if c > 0]
        p = np.vstack(parts)
        on = np.abs(field.root.sdf(p)) <= 1e-9 * scale
        on &= np.all((p >= lo) & (p <= hi), axis=1)
        kept = np.vstack([kept, p[on]])
        if len(kept) >= n:
            return kept[:n]
        frac = max(on.mean(), 1e-3)
        batch = int(min(50 * n, (n - len(kept)) / frac * 1.2 + 64))
    raise RuntimeError("could not gather enough on-surface reference points")


def mesh_reference(vertices, faces, n=MESH_REFERENCE_SIZE, seed=0):
    """Area-weighted uniform points on a triangle mesh."""
    rng = np.random.default_rng(seed)
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    area = 0.5 * np.linalg.norm(np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)
    tri = rng.choice(len(f), size=n, p=area / area.sum())
    r1 = np.sqrt(rng.uniform(size=n))
    r2 = rng.uniform(size=n)
    a, b, c = v[f[tri, 0]], v[f[tri, 1]], v[f[tri, 2]]
    return ((1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c)


def reference_cloud(field, n=None, seed=0):
    """Dense ground-truth surface points for chamfer evaluation.

    Analytic fields are sampled in closed form (100k points), winding-number
    fields area-uniformly on their mesh (500k).  Other fields are meshed by
    marching cubes at N=256 on an uncounted copy of the field.
    """
    if isinstance(field, F.AnalyticField):
        return analytic_reference(field, n or ANALYTIC_REFERENCE_SIZE, seed)
    if isinstance(field, F.MeshWindingField):
        return mesh_reference(field.vertices, field.faces, n or MESH_REFERENCE_SIZE, seed)
    from .baselines import GridSampler, marching_cubes

    shadow = copy.copy(field)
    shadow._count = 0
    _, mesh, _ = marching_cubes(shadow, GridSampler(256, refine_steps=8))
    return mesh_reference(mesh.vertices, mesh.faces, n or MESH_REFERENCE_SIZE, seed)


def load_points(path):
    """Reference points from a PLY or whitespace-separated xyz file."""
    from .io import read_ply_points

    if str(path).lower().endswith(".ply"):
        return read_ply_points(path)
    return np.loadtxt(path, dtype=np.float64).reshape(-1, 3)


# --------------------------------------------------------------------------
# reports

def iteration_report(stats):
    """One row per iteration plus a totals row (list of dicts)."""
    rows = []
    prev = None
    for r in stats.iterations:
        growth = (r.crossing_edges / prev) if prev else None
        rows.append({
            "phase": r.phase, "round": r.round, "iteration": r.iteration,
            "crossing_edges": r.crossing_edges,
            "mean_crossing_length": r.mean_crossing_length,
            "growth_factor": growth,
            "long_edges": r.long_edges, "new_vertices": r.new_vertices,
            "evals": r.evals, "cumulative_evals": r.cumulative_evals,
            "n_vertices": r.n_vertices,
        })
        prev = r.crossing_edges
    rows.append({
        "phase": "total", "round": "", "iteration": "",
        "crossing_edges": stats.samples, "mean_crossing_length": "",
        "growth_factor": "", "long_edges": "", "new_vertices": "",
        "evals": stats.evals, "cumulative_evals": stats.evals,
        "n_vertices": "", "evals_per_sample": stats.evals_per_sample if stats.samples else "",
    })
    return rows


ITERATION_COLUMNS = ["phase", "round", "iteration", "crossing_edges", "mean_crossing_length",
                     "growth_factor", "long_edges", "new_vertices", "evals", "cumulative_evals",
                     "n_vertices", "evals_per_sample"]


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return x


def write_csv(rows, columns, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in columns})


def mean_growth_factor(stats, first=1, last=3, round_=0):
    """Mean ratio of crossing-edge counts over refinement iterations first..last."""
    rec = stats.refinement_records(round_)
    ratios = [rec[i].crossing_edges / rec[i - 1].crossing_edges
              for i in range(first, min(last, len(rec) - 1) + 1) if rec[i - 1].crossing_edges]
    return float(np.mean(ratios)) if ratios else 0.0


def length_shrinkage(stats, iterations=2, round_=0):
    """Fractional drop of mean crossing-edge length after ``iterations`` refinements."""
    rec = stats.refinement_records(round_)
    if len(rec) <= iterations or rec[0].mean_crossing_length == 0:
        return 0.0
    return 1.0 - rec[iterations].mean_crossing_length / rec[0].mean_crossing_length


def clustering_fraction(points, radius):
    """Fraction of points whose nearest neighbour is closer than ``radius``."""
    pts = np.asarray(points).reshape(-1, 3)
    if len(pts) < 2:
        return 0.0
    d, _ = cKDTree(pts).query(pts, k=2)
    return float((d[:, 1] < radius).mean())


# --------------------------------------------------------------------------
# comparison table

def _row(method, resolution, chamfer, samples, evals, seconds, **extra):
    row = {"Method": method, "Resolution": resolution,
           "Chamfer x1000": None if chamfer is None else 1000.0 * chamfer,
           "# Output Samples": samples, "# Evals": evals, "Time": seconds}
    row.update(extra)
    return row


def comparison_table(field, configs=None, baselines=("mc", "rrs"), reference=None, seed=0):
    """ADS rows (low/medium/high tau) plus baselines matched to each ADS chamfer.

    Baseline rows use the smallest parameter whose chamfer is at most the
    ADS value; the nearest parameter still above it is kept in the extra
    ``above_*`` fields.  Times are wall-clock seconds excluding I/O.
    """
    if reference is None:
        reference = reference_cloud(field, seed=seed)
    if configs is None:
        configs = [(name, AdsConfig(tau=t, seed=seed)) for name, t in ADS_RESOLUTIONS]
    rows = []
    targets = []
    for name, cfg in configs:
        before = field.eval_count
        t = time.perf_counter()
        samples, _, stats = run(field, cfg)
        el = time.perf_counter() - t
        ch = chamfer_l1(samples.points, reference) if len(samples) else None
        rows.append(_row("ADS", f"{name} (tau={cfg.tau:g})", ch, len(samples),
                         field.eval_count - before, el, tau=cfg.tau))
        targets.append((name, cfg, ch))
    for kind in baselines:
        label = {"mc": "MC", "rrs": "RRS"}[kind]
        for name, cfg, ch in targets:
            if ch is None:
                rows.append(_row(label, name, None, 0, 0, 0.0, error="ADS produced no samples"))
                continue
            try:
                m = match_accuracy(field, ch, kind, reference, tau=cfg.tau, seed=seed)
            except Unreachable as exc:
                rows.append(_row(label, name, None, None, None, None, error=str(exc)))
                continue
            param = f"N={m.parameter}" if kind == "mc" else f"rays={m.parameter}"
            rows.append(_row(label, f"{name} ({param})", m.chamfer, m.samples, m.evals, m.time_s,
                             parameter=m.parameter, target_chamfer_x1000=1000.0 * ch,
                             above_parameter=m.above_parameter,
                             above_chamfer_x1000=None if m.above_chamfer is None
                             else 1000.0 * m.above_chamfer,
                             above_evals=m.above_evals, probes=m.probes))
    return rows


def write_table(rows, csv_path, json_path=None):
    write_csv(rows, TABLE_COLUMNS, csv_path)
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump({"columns": TABLE_COLUMNS, "time_excludes_io": True, "rows": rows},
                      fh, indent=2, default=float)
