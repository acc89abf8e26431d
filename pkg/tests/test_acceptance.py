"""Acceptance suite: one PASS/FAIL line per criterion at the stated tolerances.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdict lines are
printed even when pytest captures output.
"""
import json
import sys

import numpy as np
import pytest

from ads import cli
from ads import delaunay as dl
from ads import pipeline as pl
from ads.baselines import match_accuracy
from ads.evaluation import (chamfer_l1, clustering_fraction, length_shrinkage,
                            mean_growth_factor)
from ads.fields import cube_field, exact_surface_distance
from ads.mesh import manifold_report, optimize_mesh, reject_subsample

from conftest import cached_reference, cached_run
from test_delaunay import circumsphere_violations, tet_set

TAUS = (0.05, 0.03, 0.02)
SHAPES = ("sphere", "torus")
CHI = {"sphere": 2, "torus": 0}


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: {detail}")
        assert ok, f"criterion {number} ({title}) failed: {detail}"
    return emit


def test_c01_edge_bound(verdict):
    worst = []
    ok = True
    for name in SHAPES:
        for tau in TAUS:
            _, _, mesh, stats = cached_run(name, tau)
            ratio = mesh.edge_lengths().max() / (2 * tau)
            secs = stats.timing["total_ms"] / 1000
            ok &= bool(ratio < 1.0) and secs <= 60.0
            worst.append(f"{name}@{tau:g} max/2tau={ratio:.3f} {secs:.1f}s")
    verdict(1, "mesh edges < 2 tau, runtime <= 60 s", ok, "; ".join(worst))


def test_c02_evals_per_sample(verdict):
    vals = {(n, t): cached_run(n, t)[3].evals_per_sample for n in SHAPES for t in TAUS}
    ok = all(v <= 13 for v in vals.values())
    verdict(2, "evals per sample <= 13", ok,
            ", ".join(f"{n}@{t:g}={v:.2f}" for (n, t), v in vals.items()))


def test_c03_relative_efficiency(verdict):
    fld, samples, _, stats = cached_run("torus", 0.03)
    ref = cached_reference("torus")
    target = chamfer_l1(samples.points, ref)
    parts = []
    ok = True
    for kind in ("mc", "rrs"):
        m = match_accuracy(type(fld)(fld.root, fld.domain), target, kind, ref, tau=0.03)
        ratio = m.evals / stats.evals
        ok &= bool(m.chamfer <= target) and ratio >= 4.0
        parts.append(f"{kind} param={m.parameter} chamfer={1000 * m.chamfer:.3f} "
                     f"evals={m.evals} ({ratio:.1f}x ADS)")
    verdict(3, "ADS evals <= 1/4 of MC and RRS at matched chamfer", ok,
            f"ADS chamfer={1000 * target:.3f} evals={stats.evals}; " + "; ".join(parts))


def test_c04_growth_factor(verdict):
    vals = {(n, t): mean_growth_factor(cached_run(n, t)[3], 1, 3) for n in SHAPES for t in TAUS}
    ok = all(v >= 2.0 for v in vals.values())
    verdict(4, "mean crossing-edge growth over iterations 1-3 >= 2.0", ok,
            ", ".join(f"{n}@{t:g}={v:.2f}" for (n, t), v in vals.items()))


def test_c05_length_shrinkage(verdict):
    vals = {(n, t): length_shrinkage(cached_run(n, t)[3], 2) for n in SHAPES for t in TAUS}
    ok = all(v >= 0.25 for v in vals.values())
    verdict(5, "mean crossing length falls >= 25% over two iterations", ok,
            ", ".join(f"{n}@{t:g}={100 * v:.1f}%" for (n, t), v in vals.items()))


def test_c06_sample_accuracy(verdict):
    parts = []
    ok = True
    for tau in TAUS:
        fld, samples, _, _ = cached_run("sphere", tau)
        tol = pl.AdsConfig(tau=tau).search_tolerance
        d = exact_surface_distance(fld, samples.points).max()
        ok &= bool(d <= tol)
        parts.append(f"tau={tau:g} max={d:.3e} tol={tol:.3e}")
    verdict(6, "sphere sample distance <= tau/32", ok, "; ".join(parts))


def test_c07_topology(verdict):
    parts = []
    ok = True
    for name in SHAPES:
        for tau in TAUS:
            fld, _, mesh, _ = cached_run(name, tau)
            before = manifold_report(mesh)
            after = manifold_report(optimize_mesh(mesh, tau / 2))
            good = all(r.is_closed and r.non_manifold_edges == 0
                       and r.euler_characteristic == CHI[name] for r in (before, after))
            ok &= good
            parts.append(f"{name}@{tau:g} chi {before.euler_characteristic}->"
                         f"{after.euler_characteristic}")
    verdict(7, "closed 2-manifold, chi 2/0, preserved by optimization", ok, ", ".join(parts))


def test_c08_delaunay(verdict):
    rng = np.random.default_rng(2024)
    box = (np.full(3, -1.0), np.full(3, 1.0))
    sc = dl.build_initial(rng.uniform(-1, 1, size=(50, 3)), dl.domain_corners(box))
    for p in rng.uniform(-1, 1, size=(1000, 3)):
        dl.insert_vertex(sc, p, hint=int(rng.integers(sc.nv)))
    bad = circumsphere_violations(sc)
    rebuilt = dl.build_initial(sc.points.copy())
    same = tet_set(sc.finite_tets()[1]) == tet_set(rebuilt.finite_tets()[1])
    verdict(8, "1000 insertions: empty circumspheres, equals rebuild", bad == 0 and same,
            f"violations={bad}, matches rebuild={same}, tets={sc.n_tets}")


def test_c09_barrier_ablation(verdict):
    tau = 0.03
    frac = {}
    for barrier in (True, False):
        frac[barrier] = np.mean([clustering_fraction(cached_run("sphere", tau, seed=s,
                                                                barrier=barrier)[1].points, tau / 20)
                                 for s in range(5)])
    verdict(9, "barrier lowers clustering (NN < tau/20, 5 seeds)", frac[True] < frac[False],
            f"on={frac[True]:.4f} off={frac[False]:.4f}")


def _crease_distance(p, h):
    a = np.abs(p)
    out = np.full(len(p), np.inf)
    for ax in range(3):
        o = [k for k in range(3) if k != ax]
        along = np.maximum(a[:, ax] - h, 0.0)
        d = np.sqrt((a[:, o[0]] - h) ** 2 + (a[:, o[1]] - h) ** 2 + along ** 2)
        out = np.minimum(out, d)
    return out


def test_c10_mesh_guided_refinement(verdict):
    tau = 0.03
    ref = cached_reference("cube")
    c0 = chamfer_l1(cached_run("cube", tau, refinement_rounds=0)[1].points, ref)
    c1 = chamfer_l1(cached_run("cube", tau, refinement_rounds=1)[1].points, ref)
    # flagged edges of the unrefined mesh
    fld = cube_field(0.5)
    cfg = pl.AdsConfig(tau=tau)
    sc = pl.initialize(fld, cfg)
    pl.refine_edges(sc, fld, cfg)
    mesh = pl.extract_surface(sc, pl.locate_crossing_points(sc, fld, cfg))
    edges, _, _ = pl.flag_edges(mesh, sc, cfg)
    mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    near = float(np.mean(_crease_distance(mid, 0.5) <= 2 * tau)) if len(edges) else 0.0
    verdict(10, "cube: rounds=1 chamfer < rounds=0; flagged edges near creases >= 80%",
            c1 < c0 and near >= 0.8,
            f"chamfer x1000 {1000 * c0:.4f} -> {1000 * c1:.4f}; "
            f"{len(edges)} flagged, {100 * near:.1f}% within 2 tau")


def test_c11_zero_eval_postprocessing(verdict):
    parts = []
    ok = True
    for name in SHAPES:
        fld, samples, mesh, _ = cached_run(name, 0.03)
        before = fld.eval_count
        optimize_mesh(mesh, 0.015)
        reject_subsample(samples, 0.5)
        ok &= fld.eval_count == before
        parts.append(f"{name} {before}->{fld.eval_count}")
    verdict(11, "optimize_mesh and reject_subsample perform no evaluations", ok, ", ".join(parts))


def test_c12_chamfer_monotone(verdict):
    parts = []
    ok = True
    for name in SHAPES:
        ref = cached_reference(name)
        ch = [1000 * chamfer_l1(cached_run(name, t)[1].points, ref) for t in TAUS]
        ok &= ch[0] > ch[1] > ch[2]
        parts.append(f"{name} " + " > ".join(f"{c:.3f}" for c in ch))
    verdict(12, "chamfer decreases strictly over tau 0.05/0.03/0.02", ok, "; ".join(parts))


def test_c13_determinism(verdict, tmp_path):
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"tau": 0.03, "seed": 11}))
    outs = [tmp_path / "run_a", tmp_path / "run_b"]
    codes = [cli.main(["sample", "--field", "builtin:torus", "--config", str(manifest),
                       "-o", str(o)]) for o in outs]
    ply_same = (outs[0] / "samples.ply").read_bytes() == (outs[1] / "samples.ply").read_bytes()
    docs = [json.loads((o / "stats.json").read_text()) for o in outs]
    for d in docs:
        d.pop("timing")
    json_same = json.dumps(docs[0], sort_keys=True) == json.dumps(docs[1], sort_keys=True)
    verdict(13, "identical manifest and seed give identical samples.ply and stats.json",
            codes == [0, 0] and ply_same and json_same,
            f"exit={codes}, samples.ply identical={ply_same}, "
            f"stats.json identical without timing={json_same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
