"""Baseline samplers: marching cubes on a node grid and random ray stabbing."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from skimage import measure

from .mesh import SampleSet, SurfaceMesh


class Unreachable(RuntimeError):
    """The target chamfer was not met before the parameter cap."""


@dataclass
class GridSampler:
    resolution: int = 64
    refine_steps: int = 5

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")


@dataclass
class RaySampler:
    ray_count: int = 10_000
    step: float = 0.03
    refine_steps: int = 5

    def __post_init__(self):
        if self.ray_count < 1 or not self.step > 0:
            raise ValueError("ray_count >= 1 and step > 0 required")


def _bisect(fld, a, b, steps):
    """Bisect segments from inside ``a`` to outside ``b``; one batch per round."""
    lo = np.zeros(len(a))
    hi = np.ones(len(a))
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        inside = fld.classify_batch(a + mid[:, None] * (b - a)) > 0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    s = 0.5 * (lo + hi)
    return a + s[:, None] * (b - a)


def _grid_labels(fld, n, lo, hi):
    axes = [np.linspace(lo[k], hi[k], n) for k in range(3)]
    lab = np.empty((n, n, n), dtype=np.int8)
    yy, zz = np.meshgrid(axes[1], axes[2], indexing="ij")
    yz = np.stack([yy.ravel(), zz.ravel()], axis=1)
    # one x-slab per batch keeps memory flat at high resolution
    for i, x in enumerate(axes[0]):
        pts = np.column_stack([np.full(len(yz), x), yz])
        lab[i] = fld.classify_batch(pts).reshape(n, n)
    return lab, axes


def marching_cubes(fld, grid):
    """Classic 256-case marching cubes over node labels.

    Every crossing grid edge is refined by ``refine_steps`` bisections, so
    ``evals = N**3 + refine_steps * crossing_grid_edges``.
    """
    t = time.perf_counter()
    before = fld.eval_count
    n = grid.resolution
    lo, hi = fld.domain
    lab, axes = _grid_labels(fld, n, lo, hi)
    h = (hi - lo) / (n - 1)

    # crossing grid edges, keyed by (lower node flat index, axis)
    nodes = []
    for ax in range(3):
        a = np.take(lab, np.arange(n - 1), axis=ax)
        b = np.take(lab, np.arange(1, n), axis=ax)
        idx = np.argwhere(a != b)
        nodes.append((ax, idx))
    starts = []
    ends = []
    keys = []
    src = []
    for ax, idx in nodes:
        other = idx.copy()
        other[:, ax] += 1
        la = lab[idx[:, 0], idx[:, 1], idx[:, 2]]
        inside_first = la > 0
        p0 = lo + idx * h
        p1 = lo + other * h
        starts.append(np.where(inside_first[:, None], p0, p1))
        ends.append(np.where(inside_first[:, None], p1, p0))
        fa = np.ravel_multi_index(idx.T, lab.shape)
        fb = np.ravel_multi_index(other.T, lab.shape)
        keys.append((fa * 3 + ax).astype(np.int64))
        src.append(np.where(inside_first[:, None], np.stack([fa, fb], 1), np.stack([fb, fa], 1)))
    starts = np.vstack(starts)
    ends = np.vstack(ends)
    keys = np.concatenate(keys)
    src = np.vstack(src)
    if len(keys) == 0:
        stats = {"evals": fld.eval_count - before, "crossing_edges": 0,
                 "time_s": time.perf_counter() - t}
        return SampleSet.empty(), SurfaceMesh(np.empty((0, 3)), np.empty((0, 3))), stats
    refined = _bisect(fld, starts, ends, grid.refine_steps)
    order = np.argsort(keys)
    keys, refined = keys[order], refined[order]
    src = src[order]

    verts, faces, _, _ = measure.marching_cubes(lab.astype(np.float32), level=0.0,
                                                method="lorensen", allow_degenerate=False)
    # map each MC vertex (an edge midpoint in index space) to its grid edge
    twice = np.rint(verts * 2).astype(np.int64)
    ax = np.argmax(twice % 2 == 1, axis=1)
    base = twice // 2
    vkeys = np.ravel_multi_index(base.T, lab.shape) * 3 + ax
    j = np.searchsorted(keys, vkeys)
    if np.any(j >= len(keys)) or np.any(keys[np.minimum(j, len(keys) - 1)] != vkeys):
        raise RuntimeError("marching cubes vertex off a crossing grid edge")
    # samples are all crossing points; the mesh uses those referenced by MC
    samples = SampleSet(refined, src)
    mesh = SurfaceMesh(refined, j[faces])
    # skimage orients normals toward increasing values (inside); flip to point outward
    mesh.faces = mesh.faces[:, [0, 2, 1]]
    stats = {"evals": fld.eval_count - before, "crossing_edges": int(len(keys)),
             "time_s": time.perf_counter() - t}
    return samples, mesh, stats


def _domain_sphere(lo, hi):
    c = 0.5 * (lo + hi)
    return c, 0.5 * np.linalg.norm(hi - lo)


def _random_sphere_points(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _clip_lines(p, d, lo, hi):
    """Parametric [t0, t1] of lines p + t d inside the box (t0 > t1 if missed)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - p) / d
        tb = (hi - p) / d
    tmin = np.where(d != 0, np.minimum(ta, tb), -np.inf)
    tmax = np.where(d != 0, np.maximum(ta, tb), np.inf)
    # axis-parallel lines outside the slab miss entirely
    out = (d == 0) & ((p < lo) | (p > hi))
    t0 = tmin.max(axis=1)
    t1 = tmax.min(axis=1)
    t1 = np.where(out.any(axis=1), -np.inf, t1)
    return t0, t1


def ray_stab(fld, rays, seed=0):
    """Random lines through the domain, marched at a fixed step.

    Lines join two uniform random points on the domain's circumsphere and
    are clipped to the domain box.  Each ray is sampled at
    ``entry + i * step`` for ``i = 0 .. floor(length / step)``, so
    ``evals = sum of steps per ray + refine_steps * sign changes``.
    """
    t = time.perf_counter()
    before = fld.eval_count
    rng = np.random.default_rng(seed)
    lo, hi = fld.domain
    c, rad = _domain_sphere(lo, hi)
    p = c + rad * _random_sphere_points(rng, rays.ray_count)
    q = c + rad * _random_sphere_points(rng, rays.ray_count)
    d = q - p
    ln = np.linalg.norm(d, axis=1)
    keep = ln > 0
    p, d = p[keep], d[keep] / ln[keep, None]
    t0, t1 = _clip_lines(p, d, lo, hi)
    hit = t1 > t0
    p, d, t0, t1 = p[hit], d[hit], t0[hit], t1[hit]
    counts = np.floor((t1 - t0) / rays.step).astype(np.int64) + 1
    ray_id = np.repeat(np.arange(len(p)), counts)
    first = np.cumsum(counts) - counts
    step_i = np.arange(counts.sum()) - np.repeat(first, counts)
    tt = t0[ray_id] + step_i * rays.step
    pts = p[ray_id] + tt[:, None] * d[ray_id]
    # guard the last step against round-off past the box
    pts = np.clip(pts, lo, hi)
    lab = fld.classify_batch(pts) if len(pts) else np.empty(0, dtype=np.int8)
    change = np.flatnonzero((lab[:-1] != lab[1:]) & (ray_id[:-1] == ray_id[1:]))
    a = np.where((lab[change] > 0)[:, None], pts[change], pts[change + 1])
    b = np.where((lab[change] > 0)[:, None], pts[change + 1], pts[change])
    samples = _bisect(fld, a, b, rays.refine_steps) if len(change) else np.empty((0, 3))
    src = np.stack([change, change + 1], axis=1)
    stats = {"evals": fld.eval_count - before, "march_evals": int(len(pts)),
             "rays": int(rays.ray_count), "hitting_rays": int(len(np.unique(ray_id[change]))),
             "time_s": time.perf_counter() - t}
    return SampleSet(samples, src), stats


@dataclass
class MatchResult:
    kind: str
    parameter: int
    chamfer: float
    samples: int
    evals: int
    time_s: float
    above_parameter: int | None
    above_chamfer: float | None
    above_evals: int | None
    probes: int


def match_accuracy(fld, target_chamfer, kind, reference, tau=0.03, seed=0,
                   start=None, max_probes=12, cap=None):
    """Smallest grid N / ray count whose chamfer is at most ``target_chamfer``.

    Doubles the parameter from ``start`` until the target is met, then
    bisects between the last miss and the first hit.  The largest probed
    parameter still above the target is reported too.  Raises
    :class:`Unreachable` past ``cap`` (default N = 512 or 10**7 rays).
    """
    from .evaluation import chamfer_l1

    if kind == "mc":
        cap = cap or 512
        start = start or 2
    elif kind == "rrs":
        cap = cap or 10 ** 7
        start = start or 1000
    else:
        raise ValueError("kind must be 'mc' or 'rrs'")

    results = {}

    def probe(param):
        before = fld.eval_count
        t = time.perf_counter()
        if kind == "mc":
            s, _, _ = marching_cubes(fld, GridSampler(param))
        else:
            s, _ = ray_stab(fld, RaySampler(param, step=tau), seed=seed)
        el = time.perf_counter() - t
        ch = chamfer_l1(s.points, reference) if len(s) else np.inf
        results[param] = (ch, len(s), fld.eval_count - before, el)
        return ch <= target_chamfer

    lo_fail = None
    param = start
    while True:
        if len(results) >= max_probes:
            raise Unreachable(f"{kind}: probe budget exhausted before reaching {target_chamfer:g}")
        if probe(param):
            break
        lo_fail = param
        if param >= cap:
            raise Unreachable(f"{kind}: chamfer {results[param][0]:g} > {target_chamfer:g} at cap")
        param = min(2 * param, cap)
    hi_ok = param
    if lo_fail is not None:
        while hi_ok - lo_fail > max(1, lo_fail // 64) and len(results) < max_probes:
            mid = (lo_fail + hi_ok) // 2
            if probe(mid):
                hi_ok = mid
            else:
                lo_fail = mid
    ch, ns, ev, el = results[hi_ok]
    above = results.get(lo_fail) if lo_fail is not None else None
    return MatchResult(kind, hi_ok, ch, ns, ev, el,
                       lo_fail, None if above is None else above[0],
                       None if above is None else above[2], len(results))
