"""Binary PLY and OBJ writers/readers for point sets and triangle meshes."""
from __future__ import annotations

import numpy as np


def write_ply_points(path, points, normals=None):
    """Binary little-endian PLY with double x/y/z (and nx/ny/nz if given)."""
    pts = np.asarray(points, dtype="<f8").reshape(-1, 3)
    props = ["x", "y", "z"]
    cols = [pts]
    if normals is not None:
        props += ["nx", "ny", "nz"]
        cols.append(np.asarray(normals, dtype="<f8").reshape(-1, 3))
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(pts)}"]
    header += [f"property double {p}" for p in props]
    header.append("end_header")
    data = np.ascontiguousarray(np.hstack(cols), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(data.tobytes())


_PLY_TYPES = {"char": "i1", "uchar": "u1", "short": "i2", "ushort": "u2", "int": "i4",
              "uint": "u4", "float": "f4", "double": "f8", "int8": "i1", "uint8": "u1",
              "int16": "i2", "uint16": "u2", "int32": "i4", "uint32": "u4",
              "float32": "f4", "float64": "f8"}


def _read_header(fh):
    if fh.readline().strip() != b"ply":
        raise ValueError("not a PLY file")
    fmt = None
    elements = []
    while True:
        line = fh.readline()
        if not line:
            raise ValueError("truncated PLY header")
        tok = line.decode("ascii").split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            elements[-1][2].append(tok[1:])
        elif tok[0] == "end_header":
            return fmt, elements


def read_ply_points(path, with_normals=False):
    """Vertex positions (and normals if present and requested) from a PLY file."""
    with open(path, "rb") as fh:
        fmt, elements = _read_header(fh)
        name, count, props = elements[0]
        if name != "vertex" or any(p[0] == "list" for p in props):
            raise ValueError("expected a leading vertex element with scalar properties")
        endian = {"binary_little_endian": "<", "binary_big_endian": ">"}.get(fmt)
        names = [p[1] for p in props]
        if endian is None:
            arr = np.loadtxt(fh, max_rows=count, ndmin=2)
            rec = {n: arr[:, i] for i, n in enumerate(names)}
        else:
            dt = np.dtype([(p[1], endian + _PLY_TYPES[p[0]]) for p in props])
            raw = np.frombuffer(fh.read(dt.itemsize * count), dtype=dt, count=count)
            rec = {n: raw[n] for n in names}
    pts = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
    if with_normals:
        nrm = (np.column_stack([rec["nx"], rec["ny"], rec["nz"]]).astype(np.float64)
               if "nx" in rec else None)
        return pts, nrm
    return pts


def write_obj(path, vertices, faces):
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3) + 1
    with open(path, "w") as fh:
        fh.write("".join(f"v {x:.17g} {y:.17g} {z:.17g}\n" for x, y, z in v))
        fh.write("".join(f"f {a} {b} {c}\n" for a, b, c in f))


def write_ply_mesh(path, vertices, faces):
    """Binary little-endian PLY mesh (double vertices, int32 triangle lists)."""
    v = np.asarray(vertices, dtype="<f8").reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(v)}",
              "property double x", "property double y", "property double z",
              f"element face {len(f)}", "property list uchar int vertex_indices", "end_header"]
    rec = np.zeros(len(f), dtype=[("n", "u1"), ("i", "<i4", (3,))])
    rec["n"] = 3
    rec["i"] = f
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(v).tobytes())
        fh.write(rec.tobytes())


def write_mesh(path, mesh):
    if str(path).lower().endswith(".ply"):
        write_ply_mesh(path, mesh.vertices, mesh.faces)
    else:
        write_obj(path, mesh.vertices, mesh.faces)


def read_mesh(path):
    """(vertices, faces) from an OBJ or a triangle PLY written by this module."""
    if not str(path).lower().endswith(".ply"):
        from .fields import load_obj

        return load_obj(path)
    with open(path, "rb") as fh:
        fmt, elements = _read_header(fh)
        if fmt != "binary_little_endian":
            raise ValueError("only binary little-endian PLY meshes are supported")
        (_, nv, vprops), (_, nf, _) = elements[0], elements[1]
        dt = np.dtype([(p[1], "<" + _PLY_TYPES[p[0]]) for p in vprops])
        raw = np.frombuffer(fh.read(dt.itemsize * nv), dtype=dt, count=nv)
        v = np.column_stack([raw["x"], raw["y"], raw["z"]]).astype(np.float64)
        rec = np.frombuffer(fh.read(13 * nf), dtype=[("n", "u1"), ("i", "<i4", (3,))], count=nf)
        return v, rec["i"].astype(np.int64)
