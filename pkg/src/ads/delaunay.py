"""Incremental 3D Delaunay tetrahedralization (Bowyer-Watson).

The complex is stored as flat arrays so the insertion kernel can run under
numba.  Tetrahedra are positively oriented vertex quadruples with one
neighbour per slot (the neighbour across the face opposite that slot).  The
convex hull is closed off by *ghost* tetrahedra whose slot 3 holds the
infinite vertex ``INF``; ghosts let the bootstrap grow the hull, while
refinement insertions are always interior.

Degeneracies are resolved by the symbolic perturbation of
:func:`ads.predicates.insphere_sos`, which makes the triangulation unique for
a given vertex numbering and independent of insertion order.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .predicates import insphere_sos, orient3d, orient3d_idx

INF = -1

# kernel status codes
_OK = 0
_GROW = 1
_OUTSIDE = 2

_DUP_TOL2 = 1e-24


class DegenerateInput(ValueError):
    """Fewer than four affinely independent points."""


class OutsideHull(ValueError):
    """Point lies outside the convex hull of the scaffold."""


class DuplicateVertex(ValueError):
    """Point coincides with an existing vertex (within 1e-12)."""

    def __init__(self, index):
        super().__init__(f"point duplicates vertex {index}")
        self.index = int(index)


class UnlabeledVertex(ValueError):
    """An edge endpoint has no inside/outside label yet."""


@njit(cache=True)
def _xorshift(state):
    x = state[0]
    x ^= (x << np.uint64(13)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    x ^= x >> np.uint64(7)
    x ^= (x << np.uint64(17)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    state[0] = x
    return x


@njit(cache=True)
def _orient_replace(pts, tets, t, j, pi):
    # orientation of tet t with slot j replaced by vertex pi
    a = tets[t, 0] if j != 0 else pi
    b = tets[t, 1] if j != 1 else pi
    c = tets[t, 2] if j != 2 else pi
    d = tets[t, 3] if j != 3 else pi
    return orient3d_idx(pts, a, b, c, d)


@njit(cache=True)
def _locate(pts, tets, nbr, pi, start, rng):
    """Remembering stochastic visibility walk from finite tet ``start``.

    Returns (tet, is_ghost).
    """
    t = start
    prev = -1
    while True:
        r = np.int64(_xorshift(rng) & np.uint64(3))
        moved = False
        for kk in range(4):
            j = (r + kk) & 3
            u = nbr[t, j]
            if u == prev:
                continue
            if _orient_replace(pts, tets, t, j, pi) < 0:
                prev = t
                t = u
                moved = True
                break
        if not moved:
            return t, False
        if tets[t, 3] == INF:
            return t, True


@njit(cache=True)
def _in_conflict(pts, tets, nbr, t, pi):
    a = tets[t, 0]
    b = tets[t, 1]
    c = tets[t, 2]
    d = tets[t, 3]
    if d == INF:
        s = orient3d_idx(pts, a, b, c, pi)
        if s > 0:
            return True
        if s < 0:
            return False
        f = nbr[t, 3]
        return insphere_sos(pts, tets[f, 0], tets[f, 1], tets[f, 2],
                            tets[f, 3], pi) > 0
    return insphere_sos(pts, a, b, c, d, pi) > 0


@njit(cache=True)
def _grow_i64(arr, need):
    if need <= arr.shape[0]:
        return arr
    n = arr.shape[0]
    while n < need:
        n *= 2
    out = np.empty(n, dtype=arr.dtype)
    out[:arr.shape[0]] = arr
    return out


@njit(cache=True)
def _insert_ids(pts, ids, hints, tets, nbr, alive, tet_gen, vtet, mark, free,
                counters, rng, gen, allow_outside, result, begin):
    """Insert vertices ``ids[begin:]`` (coordinates already in ``pts``).

    counters = [n_used_tets, n_free, stamp, last_tet].  ``result[i]`` is set
    to ids[i] on success or the index of the coincident existing vertex.
    Returns (next index to process, status).
    """
    cap = tets.shape[0]
    cav = np.empty(256, dtype=np.int64)
    bt = np.empty(256, dtype=np.int64)
    bj = np.empty(256, dtype=np.int64)
    newt = np.empty(256, dtype=np.int64)
    keys = np.empty(768, dtype=np.int64)
    ent = np.empty(768, dtype=np.int64)
    big = np.int64(pts.shape[0] + 2)
    for i in range(begin, ids.shape[0]):
        pi = ids[i]
        h = hints[i]
        start = -1
        if h >= 0 and vtet[h] >= 0 and alive[vtet[h]]:
            start = vtet[h]
        if start < 0:
            start = counters[3]
            if start < 0 or not alive[start] or tets[start, 3] == INF:
                start = -1
                for t in range(counters[0]):
                    if alive[t] and tets[t, 3] != INF:
                        start = t
                        break
        t0, ghost = _locate(pts, tets, nbr, pi, start, rng)

        dup = -1
        nfin = 3 if tets[t0, 3] == INF else 4
        for s in range(nfin):
            v = tets[t0, s]
            dx = pts[v, 0] - pts[pi, 0]
            dy = pts[v, 1] - pts[pi, 1]
            dz = pts[v, 2] - pts[pi, 2]
            if dx * dx + dy * dy + dz * dz < _DUP_TOL2:
                dup = v
                break
        if dup >= 0:
            result[i] = dup
            continue
        if ghost and not allow_outside:
            return i, _OUTSIDE

        # cavity search
        counters[2] += 1
        cin = 2 * counters[2]
        cout = cin + 1
        nc = 1
        cav[0] = t0
        mark[t0] = cin
        nb = 0
        k = 0
        while k < nc:
            t = cav[k]
            k += 1
            for j in range(4):
                u = nbr[t, j]
                m = mark[u]
                if m == cin:
                    continue
                if m != cout:
                    if _in_conflict(pts, tets, nbr, u, pi):
                        mark[u] = cin
                        cav = _grow_i64(cav, nc + 1)
                        cav[nc] = u
                        nc += 1
                        continue
                    mark[u] = cout
                bt = _grow_i64(bt, nb + 1)
                bj = _grow_i64(bj, nb + 1)
                bt[nb] = t
                bj[nb] = j
                nb += 1

        if counters[1] + (cap - counters[0]) < nb:
            return i, _GROW

        newt = _grow_i64(newt, nb)
        for b in range(nb):
            if counters[1] > 0:
                counters[1] -= 1
                nt = free[counters[1]]
            else:
                nt = counters[0]
                counters[0] += 1
            newt[b] = nt
            t = bt[b]
            j = bj[b]
            for s in range(4):
                tets[nt, s] = tets[t, s]
            tets[nt, j] = pi
            outer = nbr[t, j]
            nbr[nt, j] = outer
            for s in range(4):
                if nbr[outer, s] == t:
                    nbr[outer, s] = nt
                    break
            alive[nt] = 1
            tet_gen[nt] = gen
            mark[nt] = 0

        # glue new tets to each other across faces containing pi
        hsize = 64
        while hsize < 6 * nb:
            hsize *= 2
        if keys.shape[0] < hsize:
            keys = np.empty(hsize, dtype=np.int64)
            ent = np.empty(hsize, dtype=np.int64)
        keys[:hsize] = -1
        mask = hsize - 1
        for b in range(nb):
            nt = newt[b]
            j = bj[b]
            for m in range(4):
                if m == j:
                    continue
                x = -2
                y = -2
                for s in range(4):
                    if s != j and s != m:
                        if x == -2:
                            x = tets[nt, s]
                        else:
                            y = tets[nt, s]
                if x > y:
                    x, y = y, x
                key = (x + 1) * big + (y + 1)
                slot = (key * np.int64(0x9E3779B1)) & mask
                while True:
                    if keys[slot] == -1:
                        keys[slot] = key
                        ent[slot] = b * 4 + m
                        break
                    if keys[slot] == key:
                        other = ent[slot]
                        t2 = newt[other // 4]
                        nbr[nt, m] = t2
                        nbr[t2, other % 4] = nt
                        keys[slot] = -3
                        break
                    slot = (slot + 1) & mask

        for q in range(nc):
            t = cav[q]
            alive[t] = 0
            free[counters[1]] = t
            counters[1] += 1
        for b in range(nb):
            nt = newt[b]
            if tets[nt, 3] != INF:
                for s in range(4):
                    vtet[tets[nt, s]] = nt
                counters[3] = nt
        result[i] = pi
    return ids.shape[0], _OK


class Scaffold:
    """Labeled vertex set with Delaunay tetrahedral connectivity.

    Attributes
    ----------
    points : (n, 3) float array view of vertex positions.
    labels : (n,) int8 array, +1 inside, -1 outside, 0 unlabeled.
    generation : int, bumped once per refinement iteration.
    """

    def __init__(self, vertex_capacity=1024, tet_capacity=4096, seed=0):
        self._pts = np.zeros((vertex_capacity, 3))
        self._labels = np.zeros(vertex_capacity, dtype=np.int8)
        self._vtet = np.full(vertex_capacity, -1, dtype=np.int64)
        self.nv = 0
        self.tets = np.zeros((tet_capacity, 4), dtype=np.int64)
        self.nbr = np.full((tet_capacity, 4), -1, dtype=np.int64)
        self.alive = np.zeros(tet_capacity, dtype=np.uint8)
        self.tet_gen = np.zeros(tet_capacity, dtype=np.int64)
        self.mark = np.zeros(tet_capacity, dtype=np.int64)
        self.free = np.zeros(tet_capacity, dtype=np.int64)
        self.counters = np.array([0, 0, 0, -1], dtype=np.int64)
        self.rng = np.array([np.uint64(seed) * np.uint64(2654435761) + np.uint64(88172645463325252)],
                            dtype=np.uint64)
        self.generation = 0
        self.examined = np.empty(0, dtype=np.int64)
        self._batch = 0
        self._examined_batch = -1

    # -- storage ---------------------------------------------------------
    @property
    def points(self):
        return self._pts[:self.nv]

    @property
    def labels(self):
        return self._labels[:self.nv]

    @property
    def n_vertices(self):
        return self.nv

    def _reserve_vertices(self, extra):
        need = self.nv + extra
        if need <= self._pts.shape[0]:
            return
        cap = max(need, 2 * self._pts.shape[0])
        pts = np.zeros((cap, 3))
        pts[:self.nv] = self._pts[:self.nv]
        labels = np.zeros(cap, dtype=np.int8)
        labels[:self.nv] = self._labels[:self.nv]
        vtet = np.full(cap, -1, dtype=np.int64)
        vtet[:self.nv] = self._vtet[:self.nv]
        self._pts, self._labels, self._vtet = pts, labels, vtet

    def _grow_tets(self, min_extra=0):
        old = self.tets.shape[0]
        cap = max(2 * old, old + min_extra)

        def grow(a, fill):
            out = np.full((cap,) + a.shape[1:], fill, dtype=a.dtype)
            out[:old] = a
            return out

        self.tets = grow(self.tets, 0)
        self.nbr = grow(self.nbr, -1)
        self.alive = grow(self.alive, 0)
        self.tet_gen = grow(self.tet_gen, 0)
        self.mark = grow(self.mark, 0)
        self.free = grow(self.free, 0)

    def _append_points(self, pts):
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        self._reserve_vertices(len(pts))
        ids = np.arange(self.nv, self.nv + len(pts), dtype=np.int64)
        self._pts[ids] = pts
        self.nv += len(pts)
        return ids

    def _insert_ids(self, ids, hints, allow_outside):
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        hints = np.ascontiguousarray(hints, dtype=np.int64)
        result = np.full(len(ids), -1, dtype=np.int64)
        begin = 0
        self._batch += 1
        while begin < len(ids):
            if self.tets.shape[0] - self.counters[0] + self.counters[1] < 4096:
                self._grow_tets()
            begin, status = _insert_ids(
                self._pts, ids, hints, self.tets, self.nbr, self.alive,
                self.tet_gen, self._vtet, self.mark, self.free, self.counters,
                self.rng, self._batch, allow_outside, result, begin)
            if status == _GROW:
                self._grow_tets()
            elif status == _OUTSIDE:
                return result, begin
        return result, -1

    # -- public queries --------------------------------------------------
    def finite_mask(self):
        n = self.counters[0]
        return (self.alive[:n] == 1) & (self.tets[:n, 3] != INF)

    def finite_tets(self):
        """(ids, vertex quadruples) of all live finite tetrahedra."""
        ids = np.flatnonzero(self.finite_mask())
        return ids, self.tets[ids]

    @property
    def n_tets(self):
        return int(self.finite_mask().sum())

    def ghost_tets(self):
        n = self.counters[0]
        ids = np.flatnonzero((self.alive[:n] == 1) & (self.tets[:n, 3] == INF))
        return ids, self.tets[ids]

    def edges(self, tet_ids=None):
        """Unique undirected edges (i < j) of the finite tetrahedra."""
        if tet_ids is None:
            _, tv = self.finite_tets()
        else:
            tv = self.tets[tet_ids]
        return unique_edges(tv, self.nv)

    def hull_vertices(self):
        _, g = self.ghost_tets()
        return np.unique(g[:, :3])

    def is_orphan(self):
        return self._vtet[:self.nv] < 0

    def check(self):
        """Structural self-check: orientation and neighbour symmetry."""
        n = self.counters[0]
        live = np.flatnonzero(self.alive[:n] == 1)
        for t in live:
            for j in range(4):
                u = self.nbr[t, j]
                if u < 0 or not self.alive[u]:
                    return False
                back = np.flatnonzero(self.nbr[u] == t)
                if len(back) != 1:
                    return False
                fa = set(self.tets[t]) - {self.tets[t, j]}
                fb = set(self.tets[u]) - {self.tets[u, back[0]]}
                if fa != fb:
                    return False
            if self.tets[t, 3] != INF:
                a, b, c, d = (self._pts[v] for v in self.tets[t])
                if orient3d(a, b, c, d) <= 0:
                    return False
        return True


def unique_edges(tv, nv):
    pairs = tv[:, [0, 0, 0, 1, 1, 2, 1, 2, 3, 2, 3, 3]].reshape(-1, 2, 6)
    a = pairs[:, 0, :].ravel()
    b = pairs[:, 1, :].ravel()
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    keys = np.unique(lo * np.int64(nv) + hi)
    return np.stack([keys // nv, keys % nv], axis=1)


def _morton_order(points):
    p = np.asarray(points)
    lo = p.min(axis=0)
    span = np.maximum(p.max(axis=0) - lo, 1e-300)
    q = np.clip(((p - lo) / span * 1023).astype(np.int64), 0, 1023)
    code = np.zeros(len(p), dtype=np.int64)
    for bit in range(10):
        for ax in range(3):
            code |= ((q[:, ax] >> bit) & 1) << (3 * bit + ax)
    return np.argsort(code, kind="stable")


def domain_corners(domain, scale=1.5):
    """The 8 corners of ``domain`` scaled about its centre."""
    lo, hi = (np.asarray(x, dtype=np.float64) for x in domain)
    c = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * scale
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                     dtype=np.float64)
    return c + signs * half


def poisson_disc_init(domain, target_count, seed, c=0.7):
    """Dart-throwing Poisson-disc sample of a box.

    The disc radius is ``c * (volume / target_count) ** (1/3)``; darts are
    thrown until ``target_count`` points are accepted or the sampling
    saturates.
    """
    lo, hi = (np.asarray(x, dtype=np.float64) for x in domain)
    ext = hi - lo
    vol = float(np.prod(ext))
    r = c * (vol / target_count) ** (1.0 / 3.0)
    rng = np.random.default_rng(seed)
    cell = r
    dims = np.maximum(np.ceil(ext / cell).astype(int), 1)
    grid = {}
    out = []
    r2 = r * r
    misses = 0
    max_misses = max(1000, 30 * target_count)
    while len(out) < target_count and misses < max_misses:
        cand = lo + rng.random((1024, 3)) * ext
        for p in cand:
            key = np.minimum((((p - lo) / cell).astype(int)), dims - 1)
            ok = True
            kx, ky, kz = key
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for dz in (-1, 0, 1):
                        for q in grid.get((kx + dx, ky + dy, kz + dz), ()):
                            d = p - q
                            if d @ d < r2:
                                ok = False
                                break
                        if not ok:
                            break
                    if not ok:
                        break
                if not ok:
                    break
            if ok:
                grid.setdefault((kx, ky, kz), []).append(p)
                out.append(p)
                misses = 0
                if len(out) >= target_count:
                    break
            else:
                misses += 1
    return np.array(out).reshape(-1, 3)


def build_initial(points, corners=None, seed=0):
    """Delaunay tetrahedralization of ``points`` (then ``corners``).

    Vertex ids follow input order: ``points`` first, ``corners`` after.
    Exactly coincident inputs become orphan vertices with no incident tets.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if corners is not None:
        pts = np.vstack([pts, np.asarray(corners, dtype=np.float64).reshape(-1, 3)])
    n = len(pts)
    sc = Scaffold(vertex_capacity=max(n, 16), tet_capacity=max(64, 8 * n), seed=seed)
    sc._append_points(pts)

    order = _morton_order(pts) if n > 64 else np.arange(n)
    if corners is not None:
        nc = len(np.asarray(corners).reshape(-1, 3))
        corner_ids = np.arange(n - nc, n)
        rest = order[order < n - nc]
        order = np.concatenate([corner_ids, rest])

    seedtet = _find_seed_tet(pts, order)
    if seedtet is None:
        raise DegenerateInput("all points are coplanar")
    a, b, c, d = seedtet
    if orient3d(pts[a], pts[b], pts[c], pts[d]) < 0:
        a, b = b, a
    _bootstrap(sc, (a, b, c, d))
    rest = np.array([i for i in order if i not in (a, b, c, d)], dtype=np.int64)
    hints = np.full(len(rest), -1, dtype=np.int64)
    sc._insert_ids(rest, hints, allow_outside=True)
    return sc


def _find_seed_tet(pts, order):
    first = order[0]
    second = third = None
    for i in order[1:]:
        if np.any(pts[i] != pts[first]):
            second = i
            break
    if second is None:
        return None
    u = pts[second] - pts[first]
    for i in order:
        if i in (first, second):
            continue
        if np.any(np.cross(u, pts[i] - pts[first]) != 0):
            third = i
            break
    if third is None:
        return None
    for i in order:
        if i in (first, second, third):
            continue
        if orient3d(pts[first], pts[second], pts[third], pts[i]) != 0:
            return first, second, third, i
    return None


def _bootstrap(sc, tet):
    a, b, c, d = tet
    verts = [a, b, c, d]
    sc.tets[0] = verts
    sc.alive[0] = 1
    for i in range(4):
        face = [verts[k] for k in range(4) if k != i]
        p = sc._pts
        if orient3d(p[face[0]], p[face[1]], p[face[2]], p[verts[i]]) > 0:
            face[0], face[1] = face[1], face[0]
        g = 1 + i
        sc.tets[g] = face + [INF]
        sc.alive[g] = 1
        sc.nbr[0, i] = g
        sc.nbr[g, 3] = 0
    # ghosts share faces (x, y, INF) pairwise
    for g in range(1, 5):
        for j in range(3):
            f = set(sc.tets[g]) - {sc.tets[g, j]}
            for h in range(1, 5):
                if h == g:
                    continue
                for k in range(3):
                    if set(sc.tets[h]) - {sc.tets[h, k]} == f:
                        sc.nbr[g, j] = h
    sc.counters[0] = 5
    sc.counters[3] = 0
    for v in verts:
        sc._vtet[v] = 0


def insert_vertex(scaffold, point, hint=-1):
    """Insert one point strictly inside the hull; returns its vertex index."""
    ids = scaffold._append_points(np.asarray(point, dtype=np.float64)[None])
    result, stop = scaffold._insert_ids(ids, np.array([hint]), allow_outside=False)
    if stop >= 0:
        scaffold.nv -= 1
        raise OutsideHull(f"point {tuple(point)} is outside the convex hull")
    if result[0] != ids[0]:
        scaffold.nv -= 1
        raise DuplicateVertex(result[0])
    return int(ids[0])


def insert_points(scaffold, points, hints):
    """Batch insertion of interior points with per-point vertex hints.

    Returns the vertex index for each point (an existing index where the
    point duplicated a vertex; that slot is then left as an orphan).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return np.empty(0, dtype=np.int64)
    ids = scaffold._append_points(points)
    result, stop = scaffold._insert_ids(ids, hints, allow_outside=False)
    if stop >= 0:
        raise OutsideHull(f"point {tuple(points[stop])} is outside the convex hull")
    return result


def crossing_edges(scaffold, only_new=False):
    """Edges whose endpoints carry opposite labels.

    Returns ``(edges, lengths)`` with each edge ordered (inside, outside).
    With ``only_new`` the edges already returned by a previous ``only_new``
    call are skipped, and the new ones recorded; candidates are drawn only
    from tetrahedra created since the last such call.
    """
    if only_new:
        n = scaffold.counters[0]
        ids = np.flatnonzero((scaffold.alive[:n] == 1) & (scaffold.tets[:n, 3] != INF)
                             & (scaffold.tet_gen[:n] > scaffold._examined_batch))
        tv = scaffold.tets[ids]
    else:
        _, tv = scaffold.finite_tets()
    lab = scaffold._labels
    if len(tv) and np.any(lab[tv.ravel()] == 0):
        raise UnlabeledVertex("crossing-edge query on unlabeled vertices")
    e = unique_edges(tv, scaffold.nv) if len(tv) else np.empty((0, 2), dtype=np.int64)
    la = lab[e[:, 0]]
    lb = lab[e[:, 1]]
    e = e[la != lb]
    if only_new:
        keys = _rekey(e)
        e = e[~np.isin(keys, scaffold.examined)]
        scaffold.examined = np.union1d(scaffold.examined, _rekey(e))
        scaffold._examined_batch = scaffold._batch
    flip = lab[e[:, 0]] < 0
    e[flip] = e[flip][:, ::-1]
    lengths = np.linalg.norm(scaffold._pts[e[:, 0]] - scaffold._pts[e[:, 1]], axis=1)
    return e, lengths


_KEY_BASE = np.int64(1) << np.int64(31)


def _rekey(e):
    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    return lo * _KEY_BASE + hi


def mean_vertex_degree(scaffold, exclude_boundary=True):
    """Mean number of incident edges per vertex.

    With ``exclude_boundary`` the mean is over vertices that are neither on
    the convex hull nor adjacent to a hull vertex (falls back to all vertices
    when none remain).
    """
    e = scaffold.edges()
    used = ~scaffold.is_orphan()
    deg = np.bincount(e.ravel(), minlength=scaffold.nv)
    if exclude_boundary:
        hull = np.zeros(scaffold.nv, dtype=bool)
        hull[scaffold.hull_vertices()] = True
        near = hull.copy()
        near[e[hull[e[:, 0]], 1]] = True
        near[e[hull[e[:, 1]], 0]] = True
        keep = used & ~near
        if keep.any():
            return float(deg[keep].mean())
    return float(2 * len(e) / used.sum())


def write_tet_mesh(scaffold, path):
    """Plain-text dump: vertex count, vertices, tet count, tets."""
    _, tv = scaffold.finite_tets()
    with open(path, "w") as fh:
        fh.write(f"{scaffold.nv}\n")
        for p, lab in zip(scaffold.points, scaffold.labels):
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g} {int(lab)}\n")
        fh.write(f"{len(tv)}\n")
        for t in tv:
            fh.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")
