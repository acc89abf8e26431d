from fractions import Fraction

import numpy as np
from hypothesis import given, settings, strategies as st

from ads.predicates import insphere_py, insphere_sos, orient3d_py


def _det(m):
    n = len(m)
    if n == 1:
        return m[0][0]
    total = Fraction(0)
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        total += (-1) ** j * m[0][j] * _det(minor)
    return total


def exact_orient(a, b, c, d):
    rows = [[Fraction(x) - Fraction(y) for x, y in zip(p, d)] for p in (a, b, c)]
    return _det(rows)


def exact_insphere(a, b, c, d, e):
    rows = []
    for p in (a, b, c, d):
        r = [Fraction(x) - Fraction(y) for x, y in zip(p, e)]
        rows.append(r + [sum(x * x for x in r)])
    return _det(rows)


def sign(x):
    return (x > 0) - (x < 0)


def test_orient_matches_rational_oracle(rng):
    for _ in range(300):
        p = rng.normal(size=(4, 3))
        assert np.sign(orient3d_py(*p)) == sign(exact_orient(*p))


def test_insphere_matches_rational_oracle(rng):
    for _ in range(300):
        p = rng.normal(size=(5, 3))
        assert np.sign(insphere_py(*p)) == sign(exact_insphere(*p))


def test_near_degenerate_orient_is_exact():
    # points nearly coplanar at the limit of double precision
    a = np.array([0.1, 0.1, 0.1])
    b = np.array([0.3, 0.7, 0.2])
    c = np.array([0.9, 0.2, 0.5])
    for k in range(20):
        t = 0.5 + k * 2.0 ** -50
        d = a + t * (b - a) + (1 - t) * (c - a) * 0.5
        assert np.sign(orient3d_py(a, b, c, d)) == sign(exact_orient(a, b, c, d))


def test_orient_sign_convention():
    a = np.array([0.0, 0.0, 0.0])
    b = np.array([1.0, 0.0, 0.0])
    c = np.array([0.0, 1.0, 0.0])
    d = np.array([0.0, 0.0, -1.0])
    assert orient3d_py(a, b, c, d) > 0


def test_cospherical_points_are_perturbed_not_zero():
    # five points on the unit sphere: exact insphere is 0, perturbation breaks the tie
    pts = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, 0, 1], [0, -1, 0]], dtype=float)
    if orient3d_py(*pts[:4]) < 0:
        pts[[0, 1]] = pts[[1, 0]]
    assert insphere_py(*pts) == 0
    s = insphere_sos(pts, 0, 1, 2, 3, 4)
    assert s in (-1, 1)


coords = st.integers(-4, 4).map(float)
point = st.tuples(coords, coords, coords)


@settings(max_examples=200, deadline=None)
@given(st.lists(point, min_size=4, max_size=4))
def test_orient_antisymmetric_under_swap(pts):
    a, b, c, d = (np.array(p) for p in pts)
    assert np.sign(orient3d_py(a, b, c, d)) == -np.sign(orient3d_py(b, a, c, d))
    assert np.sign(orient3d_py(a, b, c, d)) == np.sign(exact_orient(a, b, c, d))


@settings(max_examples=200, deadline=None)
@given(st.lists(point, min_size=5, max_size=5, unique=True))
def test_insphere_sos_never_zero_on_integer_grid(pts):
    p = np.array(pts, dtype=float)
    if orient3d_py(*p[:4]) == 0:
        return
    if orient3d_py(*p[:4]) < 0:
        p[[0, 1]] = p[[1, 0]]
    s = insphere_sos(p, 0, 1, 2, 3, 4)
    assert s in (-1, 1)
    exact = sign(exact_insphere(*p))
    if exact != 0:
        assert s == exact
