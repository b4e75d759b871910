"""Clipping of segments, polygons and tetrahedra by halfspaces ``g . x + c >= 0``.

All kernels are numba-compiled and operate on small fixed-capacity buffers.
A vertex with ``f >= -tol`` counts as inside, so pieces lying in a clipping
plane are kept whole rather than split into slivers.
"""
from __future__ import annotations

import numba
import numpy as np

POLY_CAP = 16
TET_CAP = 256


@numba.njit(cache=True)
def affine(g, c, p):
    return g[0] * p[0] + g[1] * p[1] + g[2] * p[2] + c


@numba.njit(cache=True)
def clip_interval(f0, f1, t0, t1, tol):
    """Restrict ``[t0, t1]`` to where ``f0 + t (f1 - f0) >= 0`` (with tolerance)."""
    in0 = f0 >= -tol
    in1 = f1 >= -tol
    if in0 and in1:
        return t0, t1
    if not in0 and not in1:
        return 1.0, 0.0
    ts = f0 / (f0 - f1)
    if in0:
        return t0, min(t1, ts)
    return max(t0, ts), t1


@numba.njit(cache=True)
def clip_polygon(poly, n, g, c, tol, out):
    """Sutherland-Hodgman step; returns the vertex count written to ``out``."""
    m = 0
    for i in range(n):
        j = (i + 1) % n
        fi = affine(g, c, poly[i])
        fj = affine(g, c, poly[j])
        ini = fi >= -tol
        inj = fj >= -tol
        if ini:
            out[m] = poly[i]
            m += 1
        if ini != inj:
            t = fi / (fi - fj)
            out[m] = poly[i] + t * (poly[j] - poly[i])
            m += 1
    return m


@numba.njit(cache=True)
def polygon_area_centroid(poly, n):
    """Vector area (orientation kept) and centroid of a planar polygon."""
    A = np.zeros(3)
    C = np.zeros(3)
    tot = 0.0
    for i in range(1, n - 1):
        u = poly[i] - poly[0]
        v = poly[i + 1] - poly[0]
        cr = np.cross(u, v) * 0.5
        a = np.sqrt(cr[0] ** 2 + cr[1] ** 2 + cr[2] ** 2)
        A += cr
        C += a * (poly[0] + poly[i] + poly[i + 1]) / 3.0
        tot += a
    if tot > 0:
        C /= tot
    else:
        C[:] = poly[0]
    return A, C


@numba.njit(cache=True)
def tet_volume(t):
    a = t[1] - t[0]
    b = t[2] - t[0]
    c = t[3] - t[0]
    return abs(a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
               + a[2] * (b[0] * c[1] - b[1] * c[0])) / 6.0


@numba.njit(cache=True)
def _cut(p, q, fp, fq):
    return p + (fp / (fp - fq)) * (q - p)


@numba.njit(cache=True)
def clip_tets(soup, n, g, c, tol, out):
    """Clip a tetrahedron soup by one halfspace; returns the new count (-1 on overflow)."""
    m = 0
    cap = out.shape[0]
    f = np.empty(4)
    ins = np.empty(4, dtype=np.int64)
    outs = np.empty(4, dtype=np.int64)
    for s in range(n):
        t = soup[s]
        ni = 0
        no = 0
        for k in range(4):
            f[k] = affine(g, c, t[k])
            if f[k] >= -tol:
                ins[ni] = k
                ni += 1
            else:
                outs[no] = k
                no += 1
        if ni == 0:
            continue
        if m + 3 > cap:
            return -1
        if ni == 4:
            out[m] = t
            m += 1
        elif ni == 1:
            a = ins[0]
            out[m, 0] = t[a]
            for k in range(3):
                b = outs[k]
                out[m, k + 1] = _cut(t[a], t[b], f[a], f[b])
            m += 1
        elif ni == 3:
            a, b, cc = ins[0], ins[1], ins[2]
            d = outs[0]
            pa = _cut(t[a], t[d], f[a], f[d])
            pb = _cut(t[b], t[d], f[b], f[d])
            pc = _cut(t[cc], t[d], f[cc], f[d])
            out[m, 0] = t[a]; out[m, 1] = t[b]; out[m, 2] = t[cc]; out[m, 3] = pa
            out[m + 1, 0] = t[b]; out[m + 1, 1] = t[cc]; out[m + 1, 2] = pa; out[m + 1, 3] = pb
            out[m + 2, 0] = t[cc]; out[m + 2, 1] = pa; out[m + 2, 2] = pb; out[m + 2, 3] = pc
            m += 3
        else:
            a, b = ins[0], ins[1]
            cc, d = outs[0], outs[1]
            pac = _cut(t[a], t[cc], f[a], f[cc])
            pad = _cut(t[a], t[d], f[a], f[d])
            pbc = _cut(t[b], t[cc], f[b], f[cc])
            pbd = _cut(t[b], t[d], f[b], f[d])
            out[m, 0] = t[a]; out[m, 1] = pac; out[m, 2] = pad; out[m, 3] = t[b]
            out[m + 1, 0] = pac; out[m + 1, 1] = pad; out[m + 1, 2] = t[b]; out[m + 1, 3] = pbc
            out[m + 2, 0] = pad; out[m + 2, 1] = t[b]; out[m + 2, 2] = pbc; out[m + 2, 3] = pbd
            m += 3
    return m


# ----------------------------------------------------------- python wrappers
def clip_simplex(simplex, normals, offsets, tol=1e-12):
    """Pieces of a simplex inside ``{x : n_i . x <= b_i}``.

    Returns ``(pieces, measures)``: segments as ``(k, 2, 3)``, polygons
    fan-triangulated as ``(k, 3, 3)``, tetrahedra as ``(k, 4, 3)``.
    """
    s = np.asarray(simplex, dtype=float)
    G = -np.asarray(normals, dtype=float)
    C = np.asarray(offsets, dtype=float)
    if len(s) == 2:
        t0, t1 = 0.0, 1.0
        for g, c in zip(G, C):
            t0, t1 = clip_interval(affine(g, c, s[0]), affine(g, c, s[1]), t0, t1, tol)
        if t1 <= t0:
            return np.zeros((0, 2, 3)), np.zeros(0)
        seg = np.array([s[0] + t0 * (s[1] - s[0]), s[0] + t1 * (s[1] - s[0])])
        return seg[None], np.array([np.linalg.norm(seg[1] - seg[0])])
    if len(s) == 3:
        poly = np.zeros((POLY_CAP, 3))
        buf = np.zeros((POLY_CAP, 3))
        poly[:3] = s
        n = 3
        for g, c in zip(G, C):
            n = clip_polygon(poly, n, g, c, tol, buf)
            poly, buf = buf, poly
            if n < 3:
                return np.zeros((0, 3, 3)), np.zeros(0)
        tris = np.array([[poly[0], poly[i], poly[i + 1]] for i in range(1, n - 1)])
        area = 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)
        return tris, area
    soup = np.zeros((TET_CAP, 4, 3))
    buf = np.zeros((TET_CAP, 4, 3))
    soup[0] = s
    n = 1
    for g, c in zip(G, C):
        n = clip_tets(soup, n, g, c, tol, buf)
        if n < 0:
            raise RuntimeError("tetrahedron clipping buffer overflow")
        soup, buf = buf, soup
    pieces = soup[:n].copy()
    vols = np.array([tet_volume(p) for p in pieces])
    return pieces, vols
