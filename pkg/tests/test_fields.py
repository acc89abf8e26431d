import json
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ads import fields as F
from ads.evaluation import analytic_reference


def ray_parity_inside(points, v, f, direction=(0.5773, 0.5774, 0.5775)):
    """Odd number of ray-triangle hits => inside (Moller-Trumbore)."""
    d = np.asarray(direction, dtype=float)
    d /= np.linalg.norm(d)
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    e1, e2 = b - a, c - a
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    inv = 1.0 / det
    hits = np.zeros(len(points), dtype=np.int64)
    for k in range(len(f)):
        s = points - a[k]
        u = inv[k] * (s @ h[k])
        q = np.cross(s, e1[k])
        w = inv[k] * (q @ d)
        t = inv[k] * (q @ e2[k])
        hits += (u >= 0) & (w >= 0) & (u + w <= 1) & (t > 0)
    return hits % 2 == 1


def torus_mesh(R=0.6, r=0.25, nu=48, nv=24):
    u = np.linspace(0, 2 * np.pi, nu, endpoint=False)
    w = np.linspace(0, 2 * np.pi, nv, endpoint=False)
    U, W = np.meshgrid(u, w, indexing="ij")
    ring = R + r * np.cos(W)
    verts = np.stack([ring * np.cos(U), ring * np.sin(U), r * np.sin(W)], axis=-1).reshape(-1, 3)
    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            faces += [(a, b, c), (a, c, d)]
    return verts, np.array(faces)


def test_sphere_examples():
    f = F.sphere_field(0.5)
    assert list(f.classify_batch([[0, 0, 0], [2, 0, 0]])) == [1, -1]


def test_boundary_tie_is_inside():
    f = F.sphere_field(0.5)
    assert f.classify_batch([[0.5, 0, 0]])[0] == 1
    assert F.cube_field(0.5).classify_batch([[0.5, 0.1, -0.5]])[0] == 1


def test_outside_domain_is_outside_and_counted():
    f = F.FullField()
    lab = f.classify_batch([[0, 0, 0], [1.2, 0, 0], [0, 0, -1.0]])
    assert list(lab) == [1, -1, 1]
    assert f.eval_count == 3


def test_counter_is_exact_and_labels_binary(rng):
    f = F.torus_field()
    total = 0
    for n in (0, 1, 17, 1000):
        lab = f.classify_batch(rng.uniform(-1.2, 1.2, size=(n, 3)))
        total += n
        assert len(lab) == n
        assert set(np.unique(lab)) <= {-1, 1}
        assert f.eval_count == total


def test_determinism_on_duplicated_batch(rng):
    f = F.torus_field()
    p = rng.uniform(-1, 1, size=(500, 3))
    lab = f.classify_batch(np.vstack([p, p]))
    assert np.array_equal(lab[:500], lab[500:])


def test_concurrent_counting(rng):
    f = F.sphere_field()
    pts = rng.uniform(-1, 1, size=(100, 3))

    def work():
        for _ in range(50):
            f.classify_batch(pts)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert f.eval_count == 8 * 50 * 100


def test_cube_winding_point_inside():
    v, fc = F.cube_mesh(0.5)
    f = F.MeshWindingField(v, fc)
    assert f.classify_batch([[0.1, 0.2, 0.3]])[0] == 1
    assert ray_parity_inside(np.array([[0.1, 0.2, 0.3]]), v, fc)[0]


@pytest.mark.parametrize("mesh", ["cube", "torus"])
def test_winding_agrees_with_ray_parity(mesh, rng):
    v, fc = F.cube_mesh(0.5) if mesh == "cube" else torus_mesh()
    f = F.MeshWindingField(v, fc)
    pts = rng.uniform(-1, 1, size=(10_000, 3))
    agree = (f.classify_batch(pts) > 0) == ray_parity_inside(pts, v, fc)
    assert agree.mean() >= 0.999


def test_winding_numbers_are_integers_off_surface(rng):
    v, fc = torus_mesh()
    w = F.MeshWindingField(v, fc).winding_number(rng.uniform(-1, 1, size=(500, 3)))
    assert np.allclose(w, np.rint(w), atol=1e-6)


def test_obj_loader_roundtrip(tmp_path):
    v, fc = F.cube_mesh(0.4)
    path = tmp_path / "cube.obj"
    with open(path, "w") as fh:
        for p in v:
            fh.write(f"v {p[0]} {p[1]} {p[2]}\n")
        for a, b, c in fc:
            fh.write(f"f {a + 1}/1 {b + 1}/1 {c + 1}/1\n")
    v2, f2 = F.load_obj(path)
    assert np.allclose(v, v2) and np.array_equal(fc, f2)
    fld = F.load_field(path)
    assert isinstance(fld, F.MeshWindingField)
    assert fld.classify_batch([[0, 0, 0]])[0] == 1


def test_obj_quads_are_fanned(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    _, f = F.load_obj(path)
    assert f.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_exact_distance_examples():
    f = F.sphere_field(0.5)
    d = F.exact_surface_distance(f, np.array([[0.5, 0, 0], [0.7, 0, 0]]))
    assert d[0] == 0.0
    assert d[1] == pytest.approx(0.2)
    t = F.torus_field(0.6, 0.2)
    assert F.exact_surface_distance(t, np.array([[0.6, 0, 0.2]]))[0] == pytest.approx(0, abs=1e-15)


def test_torus_distance_matches_dense_sampling(rng):
    t = F.torus_field(0.6, 0.2)
    dense = analytic_reference(t, 400_000, seed=1)
    from scipy.spatial import cKDTree

    pts = rng.uniform(-1, 1, size=(200, 3))
    brute, _ = cKDTree(dense).query(pts)
    exact = F.exact_surface_distance(t, pts)
    assert np.all(exact <= brute + 1e-12)
    assert np.all(brute - exact < 0.01)


def test_distance_unsupported_for_winding_field():
    v, fc = F.cube_mesh()
    with pytest.raises(F.Unsupported):
        F.exact_surface_distance(F.MeshWindingField(v, fc), np.zeros((1, 3)))


def test_csg_distance_flagged_as_bound():
    root = F.Difference([F.Box((0, 0, 0), (0.5, 0.5, 0.5)), F.Sphere((0, 0, 0), 0.6)])
    assert not F.AnalyticField(root).distance_is_exact
    assert F.sphere_field().distance_is_exact


def test_csg_operations():
    a = F.Sphere((-0.2, 0, 0), 0.3)
    b = F.Sphere((0.2, 0, 0), 0.3)
    pts = np.array([[-0.4, 0, 0], [0.0, 0, 0], [0.4, 0, 0], [0, 0.5, 0]])
    assert list(F.AnalyticField(F.Union([a, b])).classify_batch(pts)) == [1, 1, 1, -1]
    assert list(F.AnalyticField(F.Intersection([a, b])).classify_batch(pts)) == [-1, 1, -1, -1]
    assert list(F.AnalyticField(F.Difference([a, b])).classify_batch(pts)) == [1, -1, -1, -1]


def test_rigid_transform_moves_shape():
    xf = [1, 0, 0, 0.3, 0, 1, 0, 0, 0, 0, 1, 0]
    f = F.AnalyticField(F.Sphere((0, 0, 0), 0.2, transform=xf))
    assert list(f.classify_batch([[0.3, 0, 0], [0, 0, 0]])) == [1, -1]
    # 90 degrees about z: local x axis maps to world y
    rz = [0, -1, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0]
    g = F.AnalyticField(F.Box((0.5, 0, 0), (0.1, 0.1, 0.1), transform=rz))
    assert list(g.classify_batch([[0, 0.5, 0], [0.5, 0, 0]])) == [1, -1]
    with pytest.raises(ValueError):
        F.Sphere(transform=[2, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0])


def test_json_roundtrip(tmp_path):
    root = F.Difference([F.Torus((0, 0, 0), 0.6, 0.25),
                         F.Plane((0, 0, 1), 0.1, transform=[1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0.05])])
    f = F.AnalyticField(root)
    path = tmp_path / "shape.json"
    path.write_text(json.dumps(f.to_dict()))
    g = F.load_field(path)
    pts = np.random.default_rng(0).uniform(-1, 1, size=(2000, 3))
    assert np.array_equal(f.classify_batch(pts), g.classify_batch(pts))


def test_bare_node_json(tmp_path):
    path = tmp_path / "s.json"
    path.write_text('{"type": "sphere", "center": [0, 0, 0], "radius": 0.6}')
    f = F.load_field(path)
    assert f.classify_batch([[0.59, 0, 0]])[0] == 1
    with pytest.raises(ValueError):
        F.node_from_dict({"type": "cone"})


def test_grid_field_nodes_match_stored_sign(tmp_path, rng):
    vals = rng.normal(size=(5, 6, 7))
    for interp in ("nearest", "trilinear"):
        g = F.GridField(vals, interpolation=interp)
        axes = [np.linspace(-1, 1, n) for n in vals.shape]
        P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        lab = g.classify_batch(P)
        assert np.array_equal(lab, np.where(vals.ravel() >= 0, 1, -1))
    g = F.GridField(vals.astype(np.float32), interpolation="trilinear")
    g.save(tmp_path / "grid.json")
    h = F.load_field(tmp_path / "grid.json")
    assert isinstance(h, F.GridField) and h.interpolation == "trilinear"
    p = rng.uniform(-1, 1, size=(1000, 3))
    assert np.array_equal(g.classify_batch(p), h.classify_batch(p))


def test_grid_sdf_convention():
    vals = np.full((3, 3, 3), 1.0)
    vals[1, 1, 1] = -1.0
    g = F.GridField(vals, inside_positive=False)
    assert g.classify_batch([[0, 0, 0]])[0] == 1
    assert g.classify_batch([[1, 1, 1]])[0] == -1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-1.5, 1.5)] * 3), min_size=1, max_size=50))
def test_labels_binary_and_counted(points):
    f = F.torus_field()
    lab = f.classify_batch(np.array(points))
    assert len(lab) == len(points) == f.eval_count
    assert set(lab.tolist()) <= {-1, 1}
