"""Adaptive Delaunay sampling of occupancy fields.

Phases: Poisson-disc initialization, crossing-edge refinement with a
barrier test, vectorized bisection of crossing edges, marching-tetrahedra
extraction, and normal-guided local refinement.
"""
from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import delaunay as dl
from .mesh import SampleSet, SurfaceMesh


class IterationCap(RuntimeWarning):
    """Edge refinement stopped at ``max_iterations`` with long crossing edges left."""


class Degenerate(ValueError):
    """An edge endpoint has no incident faces besides the shared ones."""


@dataclass
class AdsConfig:
    tau: float = 0.03
    initial_points: int = 10_000
    search_tolerance: float | None = None
    barrier_offset_fraction: float = 0.05
    normal_angle_threshold: float = 30.0
    mesh_edge_min_length: float | None = None
    tet_edge_min_length: float | None = None
    refinement_rounds: int = 1
    max_iterations: int = 40
    seed: int = 0
    barrier: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.search_tolerance is None:
            self.search_tolerance = self.tau / 32.0
        if self.mesh_edge_min_length is None:
            self.mesh_edge_min_length = self.tau / 2.0
        if self.tet_edge_min_length is None:
            self.tet_edge_min_length = self.tau / 2.0
        if not 0 < self.search_tolerance < self.tau:
            raise ValueError("search_tolerance must lie in (0, tau)")
        if not 0 < self.barrier_offset_fraction < 0.5:
            raise ValueError("barrier_offset_fraction must lie in (0, 0.5)")
        for name in ("normal_angle_threshold", "mesh_edge_min_length", "tet_edge_min_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.initial_points < 1 or self.max_iterations < 0 or self.refinement_rounds < 0:
            raise ValueError("initial_points >= 1, max_iterations >= 0, refinement_rounds >= 0")

    @property
    def bisection_rounds(self):
        """k = ceil(log2(tau / search_tolerance))."""
        return max(0, math.ceil(math.log2(self.tau / self.search_tolerance) - 1e-12))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class IterationRecord:
    phase: str
    round: int
    iteration: int
    crossing_edges: int
    mean_crossing_length: float
    long_edges: int
    new_vertices: int
    evals: int
    cumulative_evals: int
    n_vertices: int
    wall_ms: float


@dataclass
class RunStats:
    iterations: list = field(default_factory=list)
    evals_breakdown: dict = field(default_factory=lambda: {
        "initial_labels": 0, "midpoints": 0, "barrier_probes": 0,
        "new_vertex_labels": 0, "bisection": 0, "refinement_labels": 0})
    samples: int = 0
    triangles: int = 0
    evals: int = 0
    iteration_cap: bool = False
    flagged_edges: int = 0
    degenerate_normals: int = 0
    refinement_vertices: int = 0
    timing: dict = field(default_factory=dict)

    @property
    def evals_per_sample(self):
        return self.evals / self.samples if self.samples else float("inf")

    def refinement_records(self, round_=0):
        return [r for r in self.iterations if r.round == round_ and r.phase in ("init", "refine")]

    def to_dict(self, include_timing=True):
        d = {
            "iterations": [asdict(r) for r in self.iterations],
            "evals_breakdown": dict(self.evals_breakdown),
            "totals": {
                "samples": self.samples,
                "triangles": self.triangles,
                "evals": self.evals,
                "evals_per_sample": self.evals_per_sample if self.samples else None,
                "iteration_cap": self.iteration_cap,
                "flagged_edges": self.flagged_edges,
                "degenerate_normals": self.degenerate_normals,
                "refinement_vertices": self.refinement_vertices,
            },
        }
        if include_timing:
            d["timing"] = dict(self.timing)
        else:
            for r in d["iterations"]:
                r.pop("wall_ms")
        return d


class _Counter:
    """Routes every classify call through the field and books it."""

    def __init__(self, fld, stats):
        self.field = fld
        self.stats = stats
        self.total = 0

    def __call__(self, points, bucket):
        lab = self.field.classify_batch(points)
        self.total += len(lab)
        self.stats.evals_breakdown[bucket] += len(lab)
        return lab


class _Context:
    """Mutable state shared by the phases of one run."""

    def __init__(self, fld, config):
        self.field = fld
        self.config = config
        self.stats = RunStats()
        self.classify = _Counter(fld, self.stats)
        self.cache_keys = np.empty(0, dtype=np.int64)
        self.cache_pts = np.empty((0, 3))
        self.t0 = time.perf_counter()

    def record(self, scaffold, phase, round_, iteration, long_edges, new_vertices, evals, t_start):
        e, lengths = dl.crossing_edges(scaffold)
        self.stats.iterations.append(IterationRecord(
            phase=phase, round=round_, iteration=iteration,
            crossing_edges=len(e),
            mean_crossing_length=float(lengths.mean()) if len(e) else 0.0,
            long_edges=int(long_edges), new_vertices=int(new_vertices),
            evals=int(evals), cumulative_evals=int(self.classify.total),
            n_vertices=int(scaffold.nv),
            wall_ms=1000.0 * (time.perf_counter() - t_start)))


def _ctx(fld, config, ctx):
    return ctx if ctx is not None else _Context(fld, config)


def initialize(fld, config, ctx=None):
    """Poisson-disc points plus scaled domain corners, labeled in one batch."""
    ctx = _ctx(fld, config, ctx)
    t = time.perf_counter()
    pts = dl.poisson_disc_init(fld.domain, config.initial_points, config.seed)
    sc = dl.build_initial(pts, dl.domain_corners(fld.domain), seed=config.seed)
    sc._labels[:sc.nv] = ctx.classify(sc.points, "initial_labels")
    ctx.record(sc, "init", 0, 0, 0, sc.nv, sc.nv, t)
    return sc


def _insert_labeled(scaffold, pts, hints, labels, ctx, bucket):
    """Insert points; classify those with ``labels == 0`` that survived as vertices."""
    ids = dl.insert_points(scaffold, pts, hints)
    first = scaffold.nv - len(pts)
    slots = np.arange(first, scaffold.nv)
    dup = ids != slots
    need = (labels == 0) & ~dup
    lab = labels.astype(np.int8).copy()
    if need.any():
        lab[need] = ctx.classify(pts[need], bucket)
    scaffold._labels[slots[~dup]] = lab[~dup]
    # orphan slots mirror the vertex they coincide with
    scaffold._labels[slots[dup]] = scaffold._labels[ids[dup]]
    return int((~dup).sum())


def refine_edges(scaffold, fld, config, ctx=None, round_=0):
    """Split crossing edges longer than tau until none remain.

    Returns the number of refinement iterations performed.  Sets
    ``stats.iteration_cap`` when ``max_iterations`` is exhausted.
    """
    ctx = _ctx(fld, config, ctx)
    tau = config.tau
    f = config.barrier_offset_fraction
    it = 0
    while True:
        t = time.perf_counter()
        e, lengths = dl.crossing_edges(scaffold, only_new=True)
        long = lengths > tau
        if not long.any():
            return it
        if it >= config.max_iterations:
            ctx.stats.iteration_cap = True
            warnings.warn(f"refinement stopped after {it} iterations with "
                          f"{int(long.sum())} crossing edges longer than tau", IterationCap)
            return it
        it += 1
        evals_before = ctx.classify.total
        E = e[long]
        a = scaffold._pts[E[:, 0]]
        b = scaffold._pts[E[:, 1]]
        d = b - a
        m = 0.5 * (a + b)
        n = len(E)
        if config.barrier:
            lab = ctx.classify(np.vstack([m, m - f * d, m + f * d]), "midpoints")
            ctx.stats.evals_breakdown["midpoints"] -= 2 * n
            ctx.stats.evals_breakdown["barrier_probes"] += 2 * n
            lm, ll, lr = lab[:n], lab[n:2 * n], lab[2 * n:]
            keep_mid = ll == lr
        else:
            lm = ctx.classify(m, "midpoints")
            keep_mid = np.ones(n, dtype=bool)
        # the endpoint on the other side of the midpoint is nearer the surface
        near_out = lm > 0
        third = np.where(near_out[:, None], b - d / 3.0, a + d / 3.0)
        pts = np.where(keep_mid[:, None], m, third)
        labels = np.where(keep_mid, lm, 0).astype(np.int8)
        hints = E[:, 0].copy()
        added = _insert_labeled(scaffold, pts, hints, labels, ctx, "new_vertex_labels")
        scaffold.generation += 1
        ctx.record(scaffold, "refine", round_, it, n, added, ctx.classify.total - evals_before, t)


def _edge_keys(e):
    return dl._rekey(e)


def locate_crossing_points(scaffold, fld, config, ctx=None):
    """One bisected crossing point per crossing edge of the scaffold.

    Points already found for an edge (keyed by its vertex pair) are reused,
    so only edges new since the last call are bisected.  Every round of
    bisection is a single batched classify over the active edges.
    """
    ctx = _ctx(fld, config, ctx)
    t = time.perf_counter()
    e, _ = dl.crossing_edges(scaffold)
    keys = _edge_keys(e)
    order = np.argsort(keys, kind="stable")
    e, keys = e[order], keys[order]
    if len(ctx.cache_keys):
        pos_c = np.minimum(np.searchsorted(ctx.cache_keys, keys), len(ctx.cache_keys) - 1)
        hit = ctx.cache_keys[pos_c] == keys
    else:
        pos_c = np.zeros(len(keys), dtype=np.int64)
        hit = np.zeros(len(keys), dtype=bool)
    pts = np.empty((len(e), 3))
    if hit.any():
        pts[hit] = ctx.cache_pts[pos_c[hit]]
    miss = ~hit
    if miss.any():
        a = scaffold._pts[e[miss, 0]]
        b = scaffold._pts[e[miss, 1]]
        lo = np.zeros(len(a))
        hi = np.ones(len(a))
        for _ in range(config.bisection_rounds):
            mid = 0.5 * (lo + hi)
            lab = ctx.classify(a + mid[:, None] * (b - a), "bisection")
            inside = lab > 0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        s = 0.5 * (lo + hi)
        pts[miss] = a + s[:, None] * (b - a)
        all_keys = np.concatenate([ctx.cache_keys, keys[miss]])
        all_pts = np.vstack([ctx.cache_pts, pts[miss]])
        o = np.argsort(all_keys, kind="stable")
        ctx.cache_keys, ctx.cache_pts = all_keys[o], all_pts[o]
    ctx.stats.timing["locate_ms"] = ctx.stats.timing.get("locate_ms", 0.0) + \
        1000.0 * (time.perf_counter() - t)
    return SampleSet(pts, e)


# faces opposite each slot, ordered so their normal points away from that slot
_OPP = np.array([[1, 3, 2], [0, 2, 3], [0, 3, 1], [0, 1, 2]])


def _perm_parity(p):
    """Parity (0 even, 1 odd) of each row permutation of 0..3."""
    inv = np.zeros(len(p), dtype=np.int64)
    for i in range(4):
        for j in range(i + 1, 4):
            inv += p[:, i] > p[:, j]
    return inv & 1


def extract_surface(scaffold, samples):
    """Marching tetrahedra over the crossing tets of the scaffold.

    Triangle normals point from inside to outside.  The quad of a 2/2 tet is
    split along its shorter diagonal.
    """
    ids, tv = scaffold.finite_tets()
    lab = scaffold._labels[tv]
    npos = (lab > 0).sum(axis=1)
    sel = (npos > 0) & (npos < 4)
    ids, tv, lab, npos = ids[sel], tv[sel], lab[sel], npos[sel]
    keys = _edge_keys(samples.source_edge)
    order = np.argsort(keys, kind="stable")
    sk = keys[order]

    def sample_of(u, w):
        k = _edge_keys(np.stack([u, w], axis=1))
        j = np.searchsorted(sk, k)
        if len(k) and (np.any(j >= len(sk)) or np.any(sk[np.minimum(j, len(sk) - 1)] != k)):
            raise ValueError("crossing edge without a located crossing point")
        return order[j]

    faces = []
    src = []
    rows = np.arange(len(tv))
    # 1/3 and 3/1 patterns
    for count, flip in ((1, False), (3, True)):
        mask = npos == count
        if not mask.any():
            continue
        r = rows[mask]
        odd = (lab[r] > 0) if count == 1 else (lab[r] < 0)
        s = np.argmax(odd, axis=1)
        apex = tv[r, s]
        opp = tv[r[:, None], _OPP[s]]
        tri = np.stack([sample_of(apex, opp[:, k]) for k in range(3)], axis=1)
        if flip:
            tri = tri[:, [0, 2, 1]]
        faces.append(tri)
        src.append(r)
    # 2/2 pattern
    mask = npos == 2
    if mask.any():
        r = rows[mask]
        L = lab[r]
        ins = np.argsort(-L, axis=1, kind="stable")  # inside slots first, ascending
        perm = ins.copy()
        odd = _perm_parity(perm) == 1
        perm[odd, 2], perm[odd, 3] = ins[odd, 3], ins[odd, 2]
        v = tv[r[:, None], perm]
        i1, i2, o1, o2 = v[:, 0], v[:, 1], v[:, 2], v[:, 3]
        q = np.stack([sample_of(i1, o1), sample_of(i2, o1),
                      sample_of(i2, o2), sample_of(i1, o2)], axis=1)
        P = samples.points
        d02 = np.linalg.norm(P[q[:, 0]] - P[q[:, 2]], axis=1)
        d13 = np.linalg.norm(P[q[:, 1]] - P[q[:, 3]], axis=1)
        use02 = d02 <= d13
        t1 = np.where(use02[:, None], q[:, [0, 1, 2]], q[:, [0, 1, 3]])
        t2 = np.where(use02[:, None], q[:, [0, 2, 3]], q[:, [1, 2, 3]])
        faces += [t1, t2]
        src += [r, r]
    if faces:
        F = np.vstack(faces)
        R = np.concatenate(src)
        o = np.argsort(R, kind="stable")
        F, R = F[o], R[o]
    else:
        F = np.empty((0, 3), dtype=np.int64)
        R = np.empty(0, dtype=np.int64)
    return SurfaceMesh(samples.points, F, ids[R], tv[R])


def _mesh_edge_data(mesh):
    """Manifold edges with their two faces."""
    edges, _, counts = mesh.adjacency()
    ef = mesh.edge_faces()
    ok = counts == 2
    return edges[ok], ef[ok]


def estimate_edge_normals(mesh, edge):
    """Normals at both endpoints of ``edge``, ignoring faces shared by the two.

    Each normal is the normalized mean of the unit normals of the endpoint's
    other incident faces; raises :class:`Degenerate` if there are none.
    """
    u, w = int(edge[0]), int(edge[1])
    fn = mesh.face_normals()
    f = mesh.faces
    has_u = np.any(f == u, axis=1)
    has_w = np.any(f == w, axis=1)
    out = []
    for has in (has_u, has_w):
        sel = has & ~(has_u & has_w)
        if not sel.any():
            raise Degenerate(f"edge ({u}, {w}) endpoint has only shared faces")
        n = fn[sel].sum(axis=0)
        ln = np.linalg.norm(n)
        if ln == 0:
            raise Degenerate(f"edge ({u}, {w}) endpoint normals cancel")
        out.append(n / ln)
    return out[0], out[1]


def flag_edges(mesh, scaffold, config):
    """Mesh edges meeting all refinement criteria.

    Returns (flagged edges (k, 2), their two faces (k, 2), degenerate count).
    """
    edges, ef = _mesh_edge_data(mesh)
    if len(edges) == 0:
        return edges, ef, 0
    fn = mesh.face_normals()
    nv = len(mesh.vertices)
    S = np.zeros((nv, 3))
    deg = np.zeros(nv, dtype=np.int64)
    for k in range(3):
        np.add.at(S, mesh.faces[:, k], fn)
        deg += np.bincount(mesh.faces[:, k], minlength=nv)
    shared = fn[ef[:, 0]] + fn[ef[:, 1]]
    nu = S[edges[:, 0]] - shared
    nw = S[edges[:, 1]] - shared
    lu = np.linalg.norm(nu, axis=1)
    lw = np.linalg.norm(nw, axis=1)
    valid = (deg[edges[:, 0]] > 2) & (deg[edges[:, 1]] > 2) & (lu > 0) & (lw > 0)
    cosang = np.einsum("ij,ij->i", nu, nw) / np.maximum(lu * lw, 1e-300)
    angle = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    length = np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)
    P = scaffold._pts
    tv = mesh.face_tet_vertices
    pairs = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
    tl = np.linalg.norm(P[tv[:, pairs[:, 0]]] - P[tv[:, pairs[:, 1]]], axis=2).min(axis=1)
    tets_ok = (tl[ef[:, 0]] > config.tet_edge_min_length) & (tl[ef[:, 1]] > config.tet_edge_min_length)
    flag = (valid & (angle > config.normal_angle_threshold)
            & (length > config.mesh_edge_min_length) & tets_ok)
    return edges[flag], ef[flag], int((~valid).sum())


def _circumcenters(a, b, c):
    ab = b - a
    ac = c - a
    n = np.cross(ab, ac)
    nn = np.einsum("ij,ij->i", n, n)
    num = (np.einsum("ij,ij->i", ac, ac)[:, None] * np.cross(n, ab)
           + np.einsum("ij,ij->i", ab, ab)[:, None] * np.cross(ac, n))
    return a + num / (2.0 * np.where(nn > 0, nn, 1.0))[:, None]


def refinement_targets(scaffold, tet_vertices):
    """Insertion points for a set of crossing tets (deduplicated, sorted).

    A 1/3 tet yields the circumcenter of its single-sign face; a 2/2 tet
    yields the midpoints of its all-inside and all-outside edges.  Returns
    (points, hint vertex per point).
    """
    tv = np.unique(np.sort(tet_vertices, axis=1), axis=0)
    lab = scaffold._labels[tv]
    npos = (lab > 0).sum(axis=1)
    P = scaffold._pts
    tris = []
    segs = []
    for t, l, c in zip(tv, lab, npos):
        if c in (1, 3):
            odd = l > 0 if c == 1 else l < 0
            tris.append(tuple(sorted(t[~odd])))
        elif c == 2:
            segs.append(tuple(sorted(t[l > 0])))
            segs.append(tuple(sorted(t[l < 0])))
    pts = []
    hints = []
    if tris:
        T = np.array(sorted(set(tris)), dtype=np.int64)
        cc = _circumcenters(P[T[:, 0]], P[T[:, 1]], P[T[:, 2]])
        ok = np.isfinite(cc).all(axis=1)
        pts.append(cc[ok])
        hints.append(T[ok, 0])
    if segs:
        S = np.array(sorted(set(segs)), dtype=np.int64)
        pts.append(0.5 * (P[S[:, 0]] + P[S[:, 1]]))
        hints.append(S[:, 0])
    if not pts:
        return np.empty((0, 3)), np.empty(0, dtype=np.int64)
    return np.vstack(pts), np.concatenate(hints)


def mesh_guided_refine(scaffold, mesh, fld, config, ctx=None, round_=1):
    """Insert vertices in the source tets of high-normal-divergence edges.

    Returns the ids of the inserted vertices.  The caller reruns edge
    refinement, crossing-point location and extraction.
    """
    ctx = _ctx(fld, config, ctx)
    t = time.perf_counter()
    flagged, ef, n_degen = flag_edges(mesh, scaffold, config)
    ctx.stats.flagged_edges += len(flagged)
    ctx.stats.degenerate_normals += n_degen
    ctx.last_flagged = flagged
    if len(flagged) == 0:
        return np.empty(0, dtype=np.int64)
    tets = mesh.face_tet_vertices[np.unique(ef.ravel())]
    pts, hints = refinement_targets(scaffold, tets)
    lo, hi = fld.domain
    inside = np.all((pts >= lo) & (pts <= hi), axis=1)
    pts, hints = pts[inside], hints[inside]
    evals_before = ctx.classify.total
    first = scaffold.nv
    added = _insert_labeled(scaffold, pts, hints, np.zeros(len(pts), dtype=np.int8), ctx,
                            "refinement_labels")
    ctx.stats.refinement_vertices += added
    slots = np.arange(first, scaffold.nv)
    ctx.record(scaffold, "mesh", round_, 0, len(flagged), added,
               ctx.classify.total - evals_before, t)
    return slots[~scaffold.is_orphan()[slots]]


def run(fld, config, return_scaffold=False):
    """Full pipeline; returns (samples, mesh, stats).

    An :class:`IterationCap` is reported through ``stats.iteration_cap``
    (and a warning), not raised.
    """
    ctx = _Context(fld, config)
    stats = ctx.stats
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IterationCap)
        sc = initialize(fld, config, ctx)
        refine_edges(sc, fld, config, ctx, round_=0)
        samples = locate_crossing_points(sc, fld, config, ctx)
        mesh = extract_surface(sc, samples)
        for rnd in range(1, config.refinement_rounds + 1):
            new = mesh_guided_refine(sc, mesh, fld, config, ctx, round_=rnd)
            if len(new) == 0:
                break
            refine_edges(sc, fld, config, ctx, round_=rnd)
            samples = locate_crossing_points(sc, fld, config, ctx)
            mesh = extract_surface(sc, samples)
    if stats.iteration_cap:
        warnings.warn("edge refinement hit max_iterations", IterationCap)
    samples.normals = _sample_normals(mesh)
    stats.samples = len(samples)
    stats.triangles = mesh.n_faces
    stats.evals = ctx.classify.total
    stats.timing["total_ms"] = 1000.0 * (time.perf_counter() - t0)
    if return_scaffold:
        return samples, mesh, stats, sc
    return samples, mesh, stats


def _sample_normals(mesh):
    if mesh.n_faces == 0:
        return np.zeros((len(mesh.vertices), 3))
    return mesh.vertex_normals()
