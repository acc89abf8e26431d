"""Indexed triangle meshes, manifold checks and evaluation-free post-processing."""
from __future__ import annotations

import heapq
import math
from collections import namedtuple
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class SampleSet:
    """Surface samples, each tied to the crossing edge it was found on.

    Attributes
    ----------
    points : (n, 3) sample positions.
    source_edge : (n, 2) scaffold vertex ids (inside, outside) of the edge.
    normals : optional (n, 3) unit normals.
    """

    points: np.ndarray
    source_edge: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.source_edge = np.asarray(self.source_edge, dtype=np.int64).reshape(-1, 2)

    def __len__(self):
        return len(self.points)

    def subset(self, idx):
        return SampleSet(self.points[idx], self.source_edge[idx],
                         None if self.normals is None else self.normals[idx])

    @classmethod
    def empty(cls):
        return cls(np.empty((0, 3)), np.empty((0, 2), dtype=np.int64))


@dataclass
class SurfaceMesh:
    """Triangle mesh over sample points with per-face source tetrahedra.

    ``face_source_tet`` holds scaffold tet slots; they are valid only until
    the scaffold is modified, so ``face_tet_vertices`` keeps the vertex
    quadruples as well.
    """

    vertices: np.ndarray
    faces: np.ndarray
    face_source_tet: np.ndarray = None
    face_tet_vertices: np.ndarray = None
    _adj: tuple = dc_field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.face_source_tet is None:
            self.face_source_tet = np.full(len(self.faces), -1, dtype=np.int64)
        if self.face_tet_vertices is None:
            self.face_tet_vertices = np.full((len(self.faces), 4), -1, dtype=np.int64)

    @property
    def n_faces(self):
        return len(self.faces)

    def adjacency(self):
        """(edges (E, 2) sorted pairs, face_edges (F, 3), edge face counts (E,)).

        ``face_edges[f, k]`` is the edge opposite corner ``k`` of face ``f``.
        """
        if self._adj is None:
            f = self.faces
            nv = max(len(self.vertices), 1)
            a = f[:, [1, 2, 0]].ravel()
            b = f[:, [2, 0, 1]].ravel()
            keys = np.minimum(a, b) * nv + np.maximum(a, b)
            uk, inv = np.unique(keys, return_inverse=True)
            edges = np.stack([uk // nv, uk % nv], axis=1)
            counts = np.bincount(inv, minlength=len(uk))
            self._adj = (edges, inv.reshape(-1, 3), counts)
        return self._adj

    def edge_faces(self):
        """For each edge, the two incident faces (-1 where fewer than two)."""
        edges, fe, counts = self.adjacency()
        out = np.full((len(edges), 2), -1, dtype=np.int64)
        flat = fe.ravel()
        order = np.argsort(flat, kind="stable")
        fid = order // 3
        start = np.searchsorted(flat[order], np.arange(len(edges)))
        has = counts >= 1
        out[has, 0] = fid[start[has]]
        two = counts >= 2
        out[two, 1] = fid[start[two] + 1]
        return out

    def face_normals(self, unit=True):
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        if unit:
            ln = np.linalg.norm(n, axis=1)
            n = n / np.where(ln > 0, ln, 1.0)[:, None]
        return n

    def edge_lengths(self):
        e = self.adjacency()[0]
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    def vertex_normals(self):
        """Area-weighted vertex normals (zero for unreferenced vertices)."""
        n = self.face_normals(unit=False)
        acc = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(acc, self.faces[:, k], n)
        ln = np.linalg.norm(acc, axis=1)
        return acc / np.where(ln > 0, ln, 1.0)[:, None]


ManifoldReport = namedtuple(
    "ManifoldReport", "is_closed boundary_edges non_manifold_edges euler_characteristic")


def manifold_report(mesh):
    """Closedness and Euler characteristic from the edge-face incidence."""
    if mesh.n_faces == 0:
        return ManifoldReport(False, 0, 0, 0)
    edges, _, counts = mesh.adjacency()
    boundary = int((counts == 1).sum())
    non_manifold = int((counts > 2).sum())
    n_used = len(np.unique(mesh.faces))
    chi = n_used - len(edges) + mesh.n_faces
    return ManifoldReport(boundary == 0 and non_manifold == 0, boundary, non_manifold, chi)


def is_consistently_oriented(mesh):
    """True if no directed edge is used twice (shared edges run opposite ways)."""
    f = mesh.faces
    nv = max(len(mesh.vertices), 1)
    a = f.ravel()
    b = f[:, [1, 2, 0]].ravel()
    keys = a * nv + b
    return len(np.unique(keys)) == len(keys)


def triangle_min_angles(vertices, faces):
    """Smallest interior angle (radians) of each triangle."""
    p = vertices[faces]
    out = np.full(len(faces), np.pi)
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        w = p[:, (k + 2) % 3] - p[:, k]
        nu = np.linalg.norm(u, axis=1)
        nw = np.linalg.norm(w, axis=1)
        c = np.einsum("ij,ij->i", u, w) / np.maximum(nu * nw, 1e-300)
        out = np.minimum(out, np.arccos(np.clip(c, -1.0, 1.0)))
    return out


# --------------------------------------------------------------------------
# rejection subsampling

def reject_subsample(samples, keep_fraction, seed=0):
    """Greedy sample elimination by nearest-neighbour distance.

    The sample with the smallest nearest-neighbour distance is removed until
    ``ceil(keep_fraction * n)`` remain; ties go to the lower index, so the
    result does not depend on ``seed`` (kept for interface symmetry).
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must be in (0, 1]")
    n = len(samples)
    if n == 0:
        raise ValueError("cannot subsample an empty sample set")
    target = int(np.ceil(keep_fraction * n))
    if target >= n:
        return samples.subset(np.arange(n))
    pts = samples.points
    tree = cKDTree(pts)
    alive = np.ones(n, dtype=bool)
    nn_dist = np.empty(n)
    nn_idx = np.empty(n, dtype=np.int64)
    d, j = tree.query(pts, k=2)
    # coincident points may report themselves second; fix the self index
    self_first = j[:, 0] == np.arange(n)
    nn_idx[:] = np.where(self_first, j[:, 1], j[:, 0])
    nn_dist[:] = np.where(self_first, d[:, 1], d[:, 0])
    watchers = [[] for _ in range(n)]
    for i in range(n):
        watchers[nn_idx[i]].append(i)
    heap = [(nn_dist[i], i) for i in range(n)]
    heapq.heapify(heap)

    def requery(i):
        k = 8
        while True:
            dd, jj = tree.query(pts[i], k=min(k, n))
            for dist, q in zip(np.atleast_1d(dd), np.atleast_1d(jj)):
                if q != i and alive[q]:
                    return dist, q
            if k >= n:
                return np.inf, -1
            k *= 4

    remaining = n
    while remaining > target:
        dist, i = heapq.heappop(heap)
        if not alive[i] or dist != nn_dist[i]:
            continue
        alive[i] = False
        remaining -= 1
        for w in watchers[i]:
            if alive[w] and nn_idx[w] == i:
                dd, q = requery(w)
                nn_dist[w] = dd
                nn_idx[w] = q
                if q >= 0:
                    watchers[q].append(w)
                heapq.heappush(heap, (dd, w))
        watchers[i] = []
    return samples.subset(np.flatnonzero(alive))


# --------------------------------------------------------------------------
# collapse / flip optimization

def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _cross(u, w):
    return (u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0])


def _dot(u, w):
    return u[0] * w[0] + u[1] * w[1] + u[2] * w[2]


class _EditableMesh:
    # scalar tuple math: numpy overhead dominates on single 3-vectors
    def __init__(self, mesh):
        self.v = [tuple(map(float, x)) for x in mesh.vertices]
        self.f = [list(map(int, t)) for t in mesh.faces]
        self.alive = [True] * len(self.f)
        self.vf = [set() for _ in range(len(self.v))]
        for i, t in enumerate(self.f):
            for x in t:
                self.vf[x].add(i)

    def ring(self, u):
        out = set()
        for fi in self.vf[u]:
            out.update(self.f[fi])
        out.discard(u)
        return out

    def normal(self, t):
        p = self.v
        return _cross(_sub(p[t[1]], p[t[0]]), _sub(p[t[2]], p[t[0]]))

    def shared(self, u, w):
        return [fi for fi in self.vf[u] if w in self.f[fi]]


def _min_angle(p, tris):
    best = math.pi
    for t in tris:
        a, b, c = p[t[0]], p[t[1]], p[t[2]]
        for x, y, z in ((a, b, c), (b, c, a), (c, a, b)):
            u = _sub(y, x)
            w = _sub(z, x)
            den = math.sqrt(_dot(u, u) * _dot(w, w))
            if den == 0:
                return 0.0
            best = min(best, math.acos(max(-1.0, min(1.0, _dot(u, w) / den))))
    return best


def _try_collapse(m, u, keep):
    """Collapse edge (u, keep) by removing ``u``; returns success."""
    faces_uv = m.shared(u, keep)
    if len(faces_uv) != 2:
        return False
    opp = set()
    for fi in faces_uv:
        opp.update(m.f[fi])
    opp -= {u, keep}
    if len(opp) != 2:
        return False
    if m.ring(u) & m.ring(keep) != opp:
        return False
    for x in opp:
        if len(m.ring(x)) <= 3:
            return False
    moved = [fi for fi in m.vf[u] if fi not in faces_uv]
    for fi in moved:
        old = m.f[fi]
        new = [keep if x == u else x for x in old]
        n_old = m.normal(old)
        n_new = m.normal(new)
        if _dot(n_new, n_new) == 0.0 or _dot(n_old, n_new) <= 0.0:
            return False
    for fi in faces_uv:
        m.alive[fi] = False
        for x in m.f[fi]:
            m.vf[x].discard(fi)
    for fi in moved:
        m.f[fi] = [keep if x == u else x for x in m.f[fi]]
        m.vf[keep].add(fi)
    m.vf[u] = set()
    return True


def _collapse_pass(m, threshold, frozen):
    p = m.v
    cand = set()
    for fi, t in enumerate(m.f):
        if m.alive[fi]:
            for k in range(3):
                a, b = t[k], t[(k + 1) % 3]
                cand.add((min(a, b), max(a, b)))
    cand = [(math.dist(p[a], p[b]), a, b) for a, b in cand]
    cand = sorted(c for c in cand if c[0] < threshold)
    done = 0
    for _, a, b in cand:
        if frozen[a] or frozen[b] or not m.vf[a] or not m.vf[b]:
            continue
        if b not in m.ring(a):
            continue
        # prefer removing the higher index so results are order-stable
        if _try_collapse(m, b, a) or _try_collapse(m, a, b):
            done += 1
    return done


def _flip_pass(m, frozen):
    p = m.v
    edges = set()
    for fi, t in enumerate(m.f):
        if m.alive[fi]:
            for k in range(3):
                a, b = t[k], t[(k + 1) % 3]
                edges.add((min(a, b), max(a, b)))
    done = 0
    for u, v in sorted(edges):
        if frozen[u] and frozen[v]:
            continue
        fs = m.shared(u, v)
        if len(fs) != 2:
            continue
        t1, t2 = m.f[fs[0]], m.f[fs[1]]
        # orient so t1 contains u -> v
        k = t1.index(u)
        if t1[(k + 1) % 3] != v:
            t1, t2 = t2, t1
            fs = fs[::-1]
            k = t1.index(u)
        a = t1[(k + 2) % 3]
        b = [x for x in t2 if x not in (u, v)][0]
        if a == b or b in m.ring(a):
            continue
        new1, new2 = [a, u, b], [b, v, a]
        n1, n2 = m.normal(new1), m.normal(new2)
        if _dot(n1, n2) <= 0.0 or _dot(n1, n1) == 0.0 or _dot(n2, n2) == 0.0:
            continue
        if _min_angle(p, (new1, new2)) <= _min_angle(p, (t1, t2)):
            continue
        for fi, old in zip(fs, (t1, t2)):
            for x in old:
                m.vf[x].discard(fi)
        m.f[fs[0]], m.f[fs[1]] = new1, new2
        for fi in fs:
            for x in m.f[fi]:
                m.vf[x].add(fi)
        done += 1
    return done


def optimize_mesh(mesh, collapse_threshold, max_passes=3):
    """Edge collapses (to an endpoint) then min-angle-improving flips.

    No vertex is ever moved or created, so the result needs no occupancy
    queries; boundary and non-manifold edges are frozen.  The output keeps
    only referenced vertices, in their original order.
    """
    if mesh.n_faces == 0:
        return SurfaceMesh(mesh.vertices.copy(), mesh.faces.copy(),
                           mesh.face_source_tet.copy(), mesh.face_tet_vertices.copy())
    edges, _, counts = mesh.adjacency()
    frozen = np.zeros(len(mesh.vertices), dtype=bool)
    bad = edges[counts != 2]
    frozen[bad.ravel()] = True
    m = _EditableMesh(mesh)
    for _ in range(max_passes):
        changed = 0
        if collapse_threshold > 0:
            changed += _collapse_pass(m, collapse_threshold, frozen)
        changed += _flip_pass(m, frozen)
        if changed == 0:
            break
    keep = np.flatnonzero(m.alive)
    faces = np.array([m.f[i] for i in keep], dtype=np.int64).reshape(-1, 3)
    used = np.unique(faces)
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return SurfaceMesh(mesh.vertices[used], remap[faces],
                       mesh.face_source_tet[keep], mesh.face_tet_vertices[keep])
