"""Adaptive exact geometric predicates for 3D Delaunay construction.

``orient3d`` and ``insphere`` first evaluate in floating point and compare
against a conservative forward error bound.  When the filter cannot certify
the sign, the determinant is recomputed exactly with floating-point
expansion arithmetic (Dekker/Knuth error-free transformations), working on
raw input coordinates so no rounding enters the exact path.

Sign conventions
----------------
``orient3d(a, b, c, d) = det[a - d; b - d; c - d]``.  It is positive when
``d`` lies below the plane through ``a, b, c`` with the latter seen
counter-clockwise from above.  A tetrahedron ``(v0, v1, v2, v3)`` is
positively oriented when ``orient3d(v0, v1, v2, v3) > 0``.

``insphere(a, b, c, d, e)`` is positive when ``e`` lies strictly inside the
sphere through ``a, b, c, d`` (for a positively oriented ``a, b, c, d``).

``insphere_sos`` never returns zero: exact cosphericities are broken by an
infinitesimal lift ``|p|^2 + eps_i`` where a larger vertex index dominates.
"""
import numpy as np
from numba import njit

EPSILON = 2.0 ** -53
SPLITTER = 2.0 ** 27 + 1.0
# Looser than the tight Shewchuk bounds (7+56e)e and (16+224e)e; still safe.
O3D_ERRBOUND = 8.0 * EPSILON
ISP_ERRBOUND = 20.0 * EPSILON


@njit(cache=True, inline="always")
def _two_sum(a, b):
    x = a + b
    bv = x - a
    av = x - bv
    return x, (a - av) + (b - bv)


@njit(cache=True, inline="always")
def _fast_two_sum(a, b):
    x = a + b
    return x, b - (x - a)


@njit(cache=True, inline="always")
def _split(a):
    c = SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


@njit(cache=True, inline="always")
def _two_product(a, b):
    x = a * b
    ahi, alo = _split(a)
    bhi, blo = _split(b)
    err = x - ahi * bhi - alo * bhi - ahi * blo
    return x, alo * blo - err


@njit(cache=True)
def _two_two_diff(a1, a0, b1, b0, h):
    # h receives (a1 + a0) - (b1 + b0) as a 4-component expansion
    i, x0 = _two_sum(a0, -b0)
    j, k = _two_sum(a1, i)
    i, x1 = _two_sum(k, -b1)
    x3, x2 = _two_sum(j, i)
    h[0] = x0
    h[1] = x1
    h[2] = x2
    h[3] = x3


@njit(cache=True)
def _expansion_sum(elen, e, flen, f, h):
    """Shewchuk's fast_expansion_sum_zeroelim.  Returns the length of h."""
    ei = 0
    fi = 0
    enow = e[0]
    fnow = f[0]
    if (fnow > enow) == (fnow > -enow):
        q = enow
        ei += 1
        if ei < elen:
            enow = e[ei]
    else:
        q = fnow
        fi += 1
        if fi < flen:
            fnow = f[fi]
    hi = 0
    if ei < elen and fi < flen:
        if (fnow > enow) == (fnow > -enow):
            q, hh = _fast_two_sum(enow, q)
            ei += 1
            if ei < elen:
                enow = e[ei]
        else:
            q, hh = _fast_two_sum(fnow, q)
            fi += 1
            if fi < flen:
                fnow = f[fi]
        if hh != 0.0:
            h[hi] = hh
            hi += 1
        while ei < elen and fi < flen:
            if (fnow > enow) == (fnow > -enow):
                q, hh = _two_sum(q, enow)
                ei += 1
                if ei < elen:
                    enow = e[ei]
            else:
                q, hh = _two_sum(q, fnow)
                fi += 1
                if fi < flen:
                    fnow = f[fi]
            if hh != 0.0:
                h[hi] = hh
                hi += 1
    while ei < elen:
        q, hh = _two_sum(q, enow)
        ei += 1
        if ei < elen:
            enow = e[ei]
        if hh != 0.0:
            h[hi] = hh
            hi += 1
    while fi < flen:
        q, hh = _two_sum(q, fnow)
        fi += 1
        if fi < flen:
            fnow = f[fi]
        if hh != 0.0:
            h[hi] = hh
            hi += 1
    if q != 0.0 or hi == 0:
        h[hi] = q
        hi += 1
    return hi


@njit(cache=True)
def _scale_expansion(elen, e, b, h):
    """Shewchuk's scale_expansion_zeroelim.  Returns the length of h."""
    bhi, blo = _split(b)
    q = e[0] * b
    ahi, alo = _split(e[0])
    hh = alo * blo - (q - ahi * bhi - alo * bhi - ahi * blo)
    hi = 0
    if hh != 0.0:
        h[hi] = hh
        hi += 1
    for k in range(1, elen):
        enow = e[k]
        p1 = enow * b
        ahi, alo = _split(enow)
        p0 = alo * blo - (p1 - ahi * bhi - alo * bhi - ahi * blo)
        s, hh = _two_sum(q, p0)
        if hh != 0.0:
            h[hi] = hh
            hi += 1
        q, hh = _fast_two_sum(p1, s)
        if hh != 0.0:
            h[hi] = hh
            hi += 1
    if q != 0.0 or hi == 0:
        h[hi] = q
        hi += 1
    return hi


@njit(cache=True)
def _minor2(u, v, h):
    # u.x * v.y - v.x * u.y, exactly
    p1, p0 = _two_product(u[0], v[1])
    q1, q0 = _two_product(v[0], u[1])
    _two_two_diff(p1, p0, q1, q0, h)


@njit(cache=True)
def _det3_from_minors(az, m_bc, bz, m_ac, cz, m_ab, out):
    # az*M(b,c) - bz*M(a,c) + cz*M(a,b)
    t1 = np.empty(8)
    t2 = np.empty(8)
    t3 = np.empty(8)
    s = np.empty(16)
    n1 = _scale_expansion(4, m_bc, az, t1)
    n2 = _scale_expansion(4, m_ac, -bz, t2)
    n3 = _scale_expansion(4, m_ab, cz, t3)
    ns = _expansion_sum(n1, t1, n2, t2, s)
    return _expansion_sum(ns, s, n3, t3, out)


@njit(cache=True)
def _det4_exact(a, b, c, d, out):
    """Exact det of rows [x, y, z, 1] for a, b, c, d (equals orient3d)."""
    mab = np.empty(4)
    mac = np.empty(4)
    mad = np.empty(4)
    mbc = np.empty(4)
    mbd = np.empty(4)
    mcd = np.empty(4)
    _minor2(a, b, mab)
    _minor2(a, c, mac)
    _minor2(a, d, mad)
    _minor2(b, c, mbc)
    _minor2(b, d, mbd)
    _minor2(c, d, mcd)
    bcd = np.empty(24)
    acd = np.empty(24)
    abd = np.empty(24)
    abc = np.empty(24)
    nbcd = _det3_from_minors(b[2], mcd, c[2], mbd, d[2], mbc, bcd)
    nacd = _det3_from_minors(a[2], mcd, c[2], mad, d[2], mac, acd)
    nabd = _det3_from_minors(a[2], mbd, b[2], mad, d[2], mab, abd)
    nabc = _det3_from_minors(a[2], mbc, b[2], mac, c[2], mab, abc)
    for k in range(nbcd):
        bcd[k] = -bcd[k]
    for k in range(nabd):
        abd[k] = -abd[k]
    s1 = np.empty(48)
    s2 = np.empty(48)
    n1 = _expansion_sum(nbcd, bcd, nacd, acd, s1)
    n2 = _expansion_sum(nabd, abd, nabc, abc, s2)
    return _expansion_sum(n1, s1, n2, s2, out)


@njit(cache=True, inline="always")
def _sign(x):
    if x > 0.0:
        return 1
    if x < 0.0:
        return -1
    return 0


@njit(cache=True)
def orient3d_exact(a, b, c, d):
    out = np.empty(96)
    n = _det4_exact(a, b, c, d, out)
    return _sign(out[n - 1])


@njit(cache=True)
def orient3d(a, b, c, d):
    """Sign of det[a - d; b - d; c - d] in {-1, 0, 1}, exactly."""
    adx = a[0] - d[0]
    bdx = b[0] - d[0]
    cdx = c[0] - d[0]
    ady = a[1] - d[1]
    bdy = b[1] - d[1]
    cdy = c[1] - d[1]
    adz = a[2] - d[2]
    bdz = b[2] - d[2]
    cdz = c[2] - d[2]
    bdxcdy = bdx * cdy
    cdxbdy = cdx * bdy
    cdxady = cdx * ady
    adxcdy = adx * cdy
    adxbdy = adx * bdy
    bdxady = bdx * ady
    det = (adz * (bdxcdy - cdxbdy) + bdz * (cdxady - adxcdy)
           + cdz * (adxbdy - bdxady))
    perm = ((abs(bdxcdy) + abs(cdxbdy)) * abs(adz)
            + (abs(cdxady) + abs(adxcdy)) * abs(bdz)
            + (abs(adxbdy) + abs(bdxady)) * abs(cdz))
    bound = O3D_ERRBOUND * perm
    if det > bound:
        return 1
    if -det > bound:
        return -1
    return orient3d_exact(a, b, c, d)


@njit(cache=True)
def _orient3d_slow(pts, ia, ib, ic, id_):
    return orient3d_exact(pts[ia], pts[ib], pts[ic], pts[id_])


@njit(cache=True, inline="always")
def orient3d_idx(pts, ia, ib, ic, id_):
    """:func:`orient3d` on rows of ``pts`` (avoids per-call array views)."""
    dx = pts[id_, 0]
    dy = pts[id_, 1]
    dz = pts[id_, 2]
    adx = pts[ia, 0] - dx
    bdx = pts[ib, 0] - dx
    cdx = pts[ic, 0] - dx
    ady = pts[ia, 1] - dy
    bdy = pts[ib, 1] - dy
    cdy = pts[ic, 1] - dy
    adz = pts[ia, 2] - dz
    bdz = pts[ib, 2] - dz
    cdz = pts[ic, 2] - dz
    bdxcdy = bdx * cdy
    cdxbdy = cdx * bdy
    cdxady = cdx * ady
    adxcdy = adx * cdy
    adxbdy = adx * bdy
    bdxady = bdx * ady
    det = (adz * (bdxcdy - cdxbdy) + bdz * (cdxady - adxcdy)
           + cdz * (adxbdy - bdxady))
    perm = ((abs(bdxcdy) + abs(cdxbdy)) * abs(adz)
            + (abs(cdxady) + abs(adxcdy)) * abs(bdz)
            + (abs(adxbdy) + abs(bdxady)) * abs(cdz))
    bound = O3D_ERRBOUND * perm
    if det > bound:
        return 1
    if -det > bound:
        return -1
    return _orient3d_slow(pts, ia, ib, ic, id_)


@njit(cache=True)
def insphere_fast(a, b, c, d, e):
    """Floating-point insphere determinant and its error bound."""
    aex = a[0] - e[0]
    bex = b[0] - e[0]
    cex = c[0] - e[0]
    dex = d[0] - e[0]
    aey = a[1] - e[1]
    bey = b[1] - e[1]
    cey = c[1] - e[1]
    dey = d[1] - e[1]
    aez = a[2] - e[2]
    bez = b[2] - e[2]
    cez = c[2] - e[2]
    dez = d[2] - e[2]

    aexbey = aex * bey
    bexaey = bex * aey
    ab = aexbey - bexaey
    bexcey = bex * cey
    cexbey = cex * bey
    bc = bexcey - cexbey
    cexdey = cex * dey
    dexcey = dex * cey
    cd = cexdey - dexcey
    dexaey = dex * aey
    aexdey = aex * dey
    da = dexaey - aexdey
    aexcey = aex * cey
    cexaey = cex * aey
    ac = aexcey - cexaey
    bexdey = bex * dey
    dexbey = dex * bey
    bd = bexdey - dexbey

    abc = aez * bc - bez * ac + cez * ab
    bcd = bez * cd - cez * bd + dez * bc
    cda = cez * da + dez * ac + aez * cd
    dab = dez * ab + aez * bd + bez * da

    alift = aex * aex + aey * aey + aez * aez
    blift = bex * bex + bey * bey + bez * bez
    clift = cex * cex + cey * cey + cez * cez
    dlift = dex * dex + dey * dey + dez * dez

    det = (dlift * abc - clift * dab) + (blift * cda - alift * bcd)

    aezp = abs(aez)
    bezp = abs(bez)
    cezp = abs(cez)
    dezp = abs(dez)
    p_ab = abs(aexbey) + abs(bexaey)
    p_bc = abs(bexcey) + abs(cexbey)
    p_cd = abs(cexdey) + abs(dexcey)
    p_da = abs(dexaey) + abs(aexdey)
    p_ac = abs(aexcey) + abs(cexaey)
    p_bd = abs(bexdey) + abs(dexbey)
    perm = ((p_cd * bezp + p_bd * cezp + p_bc * dezp) * alift
            + (p_da * cezp + p_ac * dezp + p_cd * aezp) * blift
            + (p_ab * dezp + p_bd * aezp + p_da * bezp) * clift
            + (p_bc * aezp + p_ac * bezp + p_ab * cezp) * dlift)
    return det, ISP_ERRBOUND * perm


@njit(cache=True)
def _lift_times(det4, n4, p, out):
    # (px^2 + py^2 + pz^2) * det4, exactly
    t1 = np.empty(192)
    t2 = np.empty(384)
    acc = np.empty(1152)
    tmp = np.empty(1152)
    nacc = 0
    for axis in range(3):
        n1 = _scale_expansion(n4, det4, p[axis], t1)
        n2 = _scale_expansion(n1, t1, p[axis], t2)
        if nacc == 0:
            for k in range(n2):
                acc[k] = t2[k]
            nacc = n2
        else:
            nt = _expansion_sum(nacc, acc, n2, t2, tmp)
            for k in range(nt):
                acc[k] = tmp[k]
            nacc = nt
    for k in range(nacc):
        out[k] = acc[k]
    return nacc


@njit(cache=True)
def insphere_exact(pts5, signs4):
    """Exact sign of the lifted 5x5 determinant for the rows of ``pts5``.

    ``signs4[k]`` receives the sign of the [x, y, z, 1] minor obtained by
    deleting row ``k``; these drive the symbolic perturbation.
    """
    total = np.empty(5760)
    tmp = np.empty(5760)
    ntot = 0
    det4 = np.empty(96)
    term = np.empty(1152)
    rows = np.empty(4, dtype=np.int64)
    for k in range(5):
        r = 0
        for m in range(5):
            if m != k:
                rows[r] = m
                r += 1
        n4 = _det4_exact(pts5[rows[0]], pts5[rows[1]], pts5[rows[2]],
                         pts5[rows[3]], det4)
        signs4[k] = _sign(det4[n4 - 1])
        nt = _lift_times(det4, n4, pts5[k], term)
        # cofactor sign (-1)^(k+1+4) for 1-based row k+1
        if k % 2 == 0:
            for m in range(nt):
                term[m] = -term[m]
        if ntot == 0:
            for m in range(nt):
                total[m] = term[m]
            ntot = nt
        else:
            nn = _expansion_sum(ntot, total, nt, term, tmp)
            for m in range(nn):
                total[m] = tmp[m]
            ntot = nn
    return _sign(total[ntot - 1])


@njit(cache=True)
def insphere(a, b, c, d, e):
    """Sign of the insphere determinant, exactly (may be zero)."""
    det, bound = insphere_fast(a, b, c, d, e)
    if det > bound:
        return 1
    if -det > bound:
        return -1
    pts5 = np.empty((5, 3))
    pts5[0] = a
    pts5[1] = b
    pts5[2] = c
    pts5[3] = d
    pts5[4] = e
    signs4 = np.empty(5, dtype=np.int64)
    return insphere_exact(pts5, signs4)


@njit(cache=True, inline="always")
def _insphere_fast_idx(pts, ia, ib, ic, id_, ie):
    ex = pts[ie, 0]
    ey = pts[ie, 1]
    ez = pts[ie, 2]
    aex = pts[ia, 0] - ex
    bex = pts[ib, 0] - ex
    cex = pts[ic, 0] - ex
    dex = pts[id_, 0] - ex
    aey = pts[ia, 1] - ey
    bey = pts[ib, 1] - ey
    cey = pts[ic, 1] - ey
    dey = pts[id_, 1] - ey
    aez = pts[ia, 2] - ez
    bez = pts[ib, 2] - ez
    cez = pts[ic, 2] - ez
    dez = pts[id_, 2] - ez

    aexbey = aex * bey
    bexaey = bex * aey
    bexcey = bex * cey
    cexbey = cex * bey
    cexdey = cex * dey
    dexcey = dex * cey
    dexaey = dex * aey
    aexdey = aex * dey
    aexcey = aex * cey
    cexaey = cex * aey
    bexdey = bex * dey
    dexbey = dex * bey
    ab = aexbey - bexaey
    bc = bexcey - cexbey
    cd = cexdey - dexcey
    da = dexaey - aexdey
    ac = aexcey - cexaey
    bd = bexdey - dexbey

    abc = aez * bc - bez * ac + cez * ab
    bcd = bez * cd - cez * bd + dez * bc
    cda = cez * da + dez * ac + aez * cd
    dab = dez * ab + aez * bd + bez * da

    alift = aex * aex + aey * aey + aez * aez
    blift = bex * bex + bey * bey + bez * bez
    clift = cex * cex + cey * cey + cez * cez
    dlift = dex * dex + dey * dey + dez * dez

    det = (dlift * abc - clift * dab) + (blift * cda - alift * bcd)

    aezp = abs(aez)
    bezp = abs(bez)
    cezp = abs(cez)
    dezp = abs(dez)
    p_ab = abs(aexbey) + abs(bexaey)
    p_bc = abs(bexcey) + abs(cexbey)
    p_cd = abs(cexdey) + abs(dexcey)
    p_da = abs(dexaey) + abs(aexdey)
    p_ac = abs(aexcey) + abs(cexaey)
    p_bd = abs(bexdey) + abs(dexbey)
    perm = ((p_cd * bezp + p_bd * cezp + p_bc * dezp) * alift
            + (p_da * cezp + p_ac * dezp + p_cd * aezp) * blift
            + (p_ab * dezp + p_bd * aezp + p_da * bezp) * clift
            + (p_bc * aezp + p_ac * bezp + p_ab * cezp) * dlift)
    return det, ISP_ERRBOUND * perm


@njit(cache=True)
def _insphere_sos_slow(pts, ia, ib, ic, id_, ie):
    idx = np.empty(5, dtype=np.int64)
    idx[0] = ia
    idx[1] = ib
    idx[2] = ic
    idx[3] = id_
    idx[4] = ie
    pts5 = np.empty((5, 3))
    for k in range(5):
        pts5[k] = pts[idx[k]]
    signs4 = np.empty(5, dtype=np.int64)
    s = insphere_exact(pts5, signs4)
    if s != 0:
        return s
    # d/d(lift_k) of the determinant is (-1)^(k+1) * minor_k (0-based k);
    # the largest vertex index carries the dominant perturbation.
    order = np.argsort(-idx)
    for m in range(5):
        k = order[m]
        if signs4[k] != 0:
            if k % 2 == 0:
                return -signs4[k]
            return signs4[k]
    return 0


@njit(cache=True, inline="always")
def insphere_sos(pts, ia, ib, ic, id_, ie):
    """Perturbed insphere over vertex indices into ``pts``; never zero.

    A positive result means ``ie`` is in conflict with tetrahedron
    ``(ia, ib, ic, id_)``.
    """
    det, bound = _insphere_fast_idx(pts, ia, ib, ic, id_, ie)
    if det > bound:
        return 1
    if -det > bound:
        return -1
    return _insphere_sos_slow(pts, ia, ib, ic, id_, ie)


def orient3d_py(a, b, c, d):
    """Convenience wrapper accepting any sequences."""
    return int(orient3d(*(np.asarray(p, dtype=np.float64) for p in (a, b, c, d))))


def insphere_py(a, b, c, d, e):
    return int(insphere(*(np.asarray(p, dtype=np.float64) for p in (a, b, c, d, e))))
