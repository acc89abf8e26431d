"""Occupancy fields: batched point -> {-1, +1} classifiers with eval counting.

Every field shares the same gateway, :meth:`OccupancyField.classify_batch`,
which counts each classified point exactly once.  Points outside the field
domain are labeled outside (-1) and still counted.
"""
from __future__ import annotations

import json
import threading
from pathlib import Path

import numpy as np
from numba import njit

DEFAULT_DOMAIN = (np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0]))


class Unsupported(TypeError):
    """The field offers no surface-distance oracle."""


class OccupancyField:
    """Base class; subclasses implement ``_classify`` on in-domain points."""

    def __init__(self, domain=None):
        if domain is None:
            domain = DEFAULT_DOMAIN
        lo, hi = (np.asarray(x, dtype=np.float64).reshape(3) for x in domain)
        if np.any(hi <= lo):
            raise ValueError("domain must have positive extent on every axis")
        self.domain = (lo, hi)
        self._count = 0
        self._lock = threading.Lock()

    @property
    def eval_count(self):
        return self._count

    def reset_count(self):
        with self._lock:
            self._count = 0

    def classify_batch(self, points):
        """Labels (+1 inside, -1 outside) for an (n, 3) array of points."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        with self._lock:
            self._count += len(pts)
        labels = np.full(len(pts), -1, dtype=np.int8)
        if len(pts) == 0:
            return labels
        lo, hi = self.domain
        inside = np.all((pts >= lo) & (pts <= hi), axis=1)
        if inside.any():
            labels[inside] = np.where(self._classify(pts[inside]), 1, -1)
        return labels

    def _classify(self, pts):
        raise NotImplementedError


# --------------------------------------------------------------------------
# analytic CSG fields

def _as_transform(t):
    if t is None:
        return None
    m = np.asarray(t, dtype=np.float64).reshape(3, 4)
    rot = m[:, :3]
    if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9):
        raise ValueError("transform must be rigid (orthonormal rotation part)")
    return m


class Node:
    """CSG node; ``sdf`` is negative inside.  ``transform`` maps local to world."""

    kind = "node"

    def __init__(self, transform=None):
        self.transform = _as_transform(transform)

    def _local(self, p):
        if self.transform is None:
            return p
        rot = self.transform[:, :3]
        return (p - self.transform[:, 3]) @ rot

    def sdf(self, p):
        return self._sdf(self._local(p))

    @property
    def exact(self):
        return True

    def _params(self):
        return {}

    def to_dict(self):
        d = {"type": self.kind, **self._params()}
        if self.transform is not None:
            d["transform"] = self.transform.ravel().tolist()
        return d


class Sphere(Node):
    kind = "sphere"

    def __init__(self, center=(0.0, 0.0, 0.0), radius=0.5, transform=None):
        super().__init__(transform)
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)

    def _sdf(self, p):
        return np.linalg.norm(p - self.center, axis=1) - self.radius

    def _params(self):
        return {"center": self.center.tolist(), "radius": self.radius}


class Box(Node):
    kind = "box"

    def __init__(self, center=(0.0, 0.0, 0.0), half_extents=(0.5, 0.5, 0.5), transform=None):
        super().__init__(transform)
        self.center = np.asarray(center, dtype=np.float64)
        self.half_extents = np.asarray(half_extents, dtype=np.float64)

    def _sdf(self, p):
        q = np.abs(p - self.center) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def _params(self):
        return {"center": self.center.tolist(), "half_extents": self.half_extents.tolist()}


class Torus(Node):
    """Torus around the local z axis."""

    kind = "torus"

    def __init__(self, center=(0.0, 0.0, 0.0), major_radius=0.6, minor_radius=0.25,
                 transform=None):
        super().__init__(transform)
        self.center = np.asarray(center, dtype=np.float64)
        self.major_radius = float(major_radius)
        self.minor_radius = float(minor_radius)

    def _sdf(self, p):
        d = p - self.center
        ring = np.hypot(d[:, 0], d[:, 1]) - self.major_radius
        return np.hypot(ring, d[:, 2]) - self.minor_radius

    def _params(self):
        return {"center": self.center.tolist(), "major_radius": self.major_radius,
                "minor_radius": self.minor_radius}


class Plane(Node):
    """Half-space ``normal . x <= offset`` (inside)."""

    kind = "plane"

    def __init__(self, normal=(0.0, 0.0, 1.0), offset=0.0, transform=None):
        super().__init__(transform)
        n = np.asarray(normal, dtype=np.float64)
        self.normal = n / np.linalg.norm(n)
        self.offset = float(offset)

    def _sdf(self, p):
        return p @ self.normal - self.offset

    def _params(self):
        return {"normal": self.normal.tolist(), "offset": self.offset}


class _Boolean(Node):
    def __init__(self, children, transform=None):
        super().__init__(transform)
        if len(children) < 1:
            raise ValueError(f"{self.kind} needs at least one child")
        self.children = list(children)

    @property
    def exact(self):
        return False

    def to_dict(self):
        d = super().to_dict()
        d["children"] = [c.to_dict() for c in self.children]
        return d


class Union(_Boolean):
    kind = "union"

    def _sdf(self, p):
        return np.min([c.sdf(p) for c in self.children], axis=0)


class Intersection(_Boolean):
    kind = "intersection"

    def _sdf(self, p):
        return np.max([c.sdf(p) for c in self.children], axis=0)


class Difference(_Boolean):
    """First child minus all the others."""

    kind = "difference"

    def _sdf(self, p):
        d = self.children[0].sdf(p)
        for c in self.children[1:]:
            d = np.maximum(d, -c.sdf(p))
        return d


_NODE_TYPES = {cls.kind: cls for cls in (Sphere, Box, Torus, Plane, Union, Intersection, Difference)}


def node_from_dict(d):
    d = dict(d)
    kind = d.pop("type")
    if kind not in _NODE_TYPES:
        raise ValueError(f"unknown CSG node type {kind!r}")
    cls = _NODE_TYPES[kind]
    if issubclass(cls, _Boolean):
        children = [node_from_dict(c) for c in d.pop("children")]
        return cls(children, **d)
    return cls(**d)


class AnalyticField(OccupancyField):
    """Occupancy of a CSG expression; boundary points (sdf == 0) are inside."""

    def __init__(self, root, domain=None):
        super().__init__(domain)
        self.root = root

    def _classify(self, pts):
        return self.root.sdf(pts) <= 0.0

    @property
    def distance_is_exact(self):
        return self.root.exact

    def signed_distance(self, points):
        return self.root.sdf(np.asarray(points, dtype=np.float64).reshape(-1, 3))

    def to_dict(self):
        lo, hi = self.domain
        return {"domain": [lo.tolist(), hi.tolist()], "shape": self.root.to_dict()}

    @classmethod
    def from_dict(cls, d):
        if "shape" in d:
            return cls(node_from_dict(d["shape"]), domain=d.get("domain"))
        return cls(node_from_dict(d))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def sphere_field(radius=0.6, center=(0.0, 0.0, 0.0)):
    return AnalyticField(Sphere(center, radius))


def torus_field(major_radius=0.6, minor_radius=0.25):
    return AnalyticField(Torus((0.0, 0.0, 0.0), major_radius, minor_radius))


def cube_field(half_size=0.5):
    return AnalyticField(Box((0.0, 0.0, 0.0), (half_size,) * 3))


class EmptyField(OccupancyField):
    def _classify(self, pts):
        return np.zeros(len(pts), dtype=bool)


class FullField(OccupancyField):
    def _classify(self, pts):
        return np.ones(len(pts), dtype=bool)


def exact_surface_distance(field, points):
    """Unsigned distance from each point to the field's surface.

    Exact for single primitives; for CSG expressions it is the usual
    min/max bound (check ``field.distance_is_exact``).
    """
    if not isinstance(field, AnalyticField):
        raise Unsupported(f"{type(field).__name__} has no distance oracle")
    return np.abs(field.signed_distance(points))


# --------------------------------------------------------------------------
# winding-number field

@njit(cache=True)
def _winding_numbers(pts, v, f):
    out = np.empty(pts.shape[0])
    for i in range(pts.shape[0]):
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        total = 0.0
        for t in range(f.shape[0]):
            ax = v[f[t, 0], 0] - px
            ay = v[f[t, 0], 1] - py
            az = v[f[t, 0], 2] - pz
            bx = v[f[t, 1], 0] - px
            by = v[f[t, 1], 1] - py
            bz = v[f[t, 1], 2] - pz
            cx = v[f[t, 2], 0] - px
            cy = v[f[t, 2], 1] - py
            cz = v[f[t, 2], 2] - pz
            la = np.sqrt(ax * ax + ay * ay + az * az)
            lb = np.sqrt(bx * bx + by * by + bz * bz)
            lc = np.sqrt(cx * cx + cy * cy + cz * cz)
            det = (ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx)
                   + az * (bx * cy - by * cx))
            den = (la * lb * lc + (ax * bx + ay * by + az * bz) * lc
                   + (ax * cx + ay * cy + az * cz) * lb
                   + (bx * cx + by * cy + bz * cz) * la)
            total += 2.0 * np.arctan2(det, den)
        out[i] = total / (4.0 * np.pi)
    return out


class MeshWindingField(OccupancyField):
    """Inside where the generalized winding number exceeds ``threshold``."""

    def __init__(self, vertices, faces, threshold=0.5, domain=None):
        super().__init__(domain)
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        self.threshold = float(threshold)

    def winding_number(self, points):
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        return _winding_numbers(pts, self.vertices, self.faces)

    def _classify(self, pts):
        return self.winding_number(pts) >= self.threshold

    @classmethod
    def load(cls, path, **kwargs):
        v, f = load_obj(path)
        return cls(v, f, **kwargs)


def load_obj(path):
    """Vertices and triangulated faces from a Wavefront OBJ file."""
    verts = []
    faces = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    k = int(tok.split("/")[0])
                    idx.append(k - 1 if k > 0 else len(verts) + k)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def cube_mesh(half_size=0.5):
    """Closed, outward-oriented triangle mesh of an axis-aligned cube."""
    s = half_size
    v = np.array([[x, y, z] for x in (-s, s) for y in (-s, s) for z in (-s, s)])
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    f = []
    for a, b, c, d in quads:
        f += [(a, b, c), (a, c, d)]
    return v, np.array(f, dtype=np.int64)


# --------------------------------------------------------------------------
# grid field

class GridField(OccupancyField):
    """Labels or scalars sampled on a regular grid of nodes spanning the domain.

    Scalar values ``>= 0`` are inside when ``inside_positive`` (the default,
    matching occupancy logits); pass ``inside_positive=False`` for SDF-style
    data where negative is inside.
    """

    def __init__(self, values, domain=None, interpolation="nearest", inside_positive=True):
        super().__init__(domain)
        self.values = np.asarray(values)
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ValueError("values must be a 3D array with at least 2 nodes per axis")
        if interpolation not in ("nearest", "trilinear"):
            raise ValueError("interpolation must be 'nearest' or 'trilinear'")
        self.interpolation = interpolation
        self.inside_positive = inside_positive

    @property
    def resolution(self):
        return tuple(self.values.shape)

    def _classify(self, pts):
        lo, hi = self.domain
        res = np.array(self.values.shape)
        u = (pts - lo) / (hi - lo) * (res - 1)
        if self.interpolation == "nearest":
            idx = np.clip(np.rint(u).astype(np.int64), 0, res - 1)
            val = self.values[idx[:, 0], idx[:, 1], idx[:, 2]].astype(np.float64)
        else:
            i0 = np.clip(np.floor(u).astype(np.int64), 0, res - 2)
            w = u - i0
            val = np.zeros(len(pts))
            vals = self.values.astype(np.float64)
            for dx in (0, 1):
                for dy in (0, 1):
                    for dz in (0, 1):
                        wt = ((w[:, 0] if dx else 1 - w[:, 0])
                              * (w[:, 1] if dy else 1 - w[:, 1])
                              * (w[:, 2] if dz else 1 - w[:, 2]))
                        val += wt * vals[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
        return val >= 0 if self.inside_positive else val <= 0

    def save(self, header_path):
        header_path = Path(header_path)
        raw = header_path.with_suffix(".raw")
        lo, hi = self.domain
        header = {
            "resolution": list(self.values.shape),
            "dtype": str(self.values.dtype),
            "domain": [lo.tolist(), hi.tolist()],
            "interpolation": self.interpolation,
            "inside_positive": self.inside_positive,
            "data": raw.name,
        }
        np.ascontiguousarray(self.values).astype(self.values.dtype.newbyteorder("<")).tofile(raw)
        header_path.write_text(json.dumps(header, indent=2))

    @classmethod
    def load(cls, header_path):
        header_path = Path(header_path)
        header = json.loads(header_path.read_text())
        dtype = np.dtype(header["dtype"]).newbyteorder("<")
        data = np.fromfile(header_path.parent / header["data"], dtype=dtype)
        values = data.reshape(header["resolution"])
        return cls(values, domain=header.get("domain"),
                   interpolation=header.get("interpolation", "nearest"),
                   inside_positive=header.get("inside_positive", True))


def load_field(path):
    """Field from a CSG JSON, an OBJ mesh, or a grid JSON header."""
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return MeshWindingField.load(path)
    with open(path) as fh:
        d = json.load(fh)
    if "resolution" in d and "data" in d:
        return GridField.load(path)
    return AnalyticField.from_dict(d)
