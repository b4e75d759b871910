"""Degrees of freedom of mollified fields: the matrix of ``I_h K_delta`` and right-hand sides.

When ``delta`` is uniform every sampling map is the affine map
``s_q(x) = alpha x + t_q`` and the Piola factor of each operator equals the
Jacobian factor of ``s_q`` restricted to the dof entity.  Hence the dof of the
mollified field on an entity ``S`` is ``sum_q W_q sigma_{s_q(S)}(f)``: the
same functional applied on the image entity.  For finite element functions
these image functionals are evaluated exactly by clipping the image simplex
against the mesh cells (low-order exact rules on each piece).  This makes
``I_h K_delta`` commute with the incidence matrices to round-off.

For a non-uniform ``delta`` the dofs are computed by quadrature of the
pointwise mollified field instead.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np
import scipy.sparse as sps

from cqinterp import clip
from cqinterp.errors import InclusionError, ParameterError
from cqinterp.fespace import (
    DEFAULT_DOF_POINTS, FEFunction, FESpace, apply_dofs, entity_simplices,
)
from cqinterp.geometry import DeltaField, ExpandMap, ShrinkMap, StarDomain, domain_contains
from cqinterp.kernel import BallQuadrature, build_ball_quadrature
from cqinterp.mesh import LOCAL_EDGES
from cqinterp.mollify import MollifiedField, MollifierVariant

# Ball rule used inside the matrix assembly: 4 points per axis, 32 nodes.
ASSEMBLY_BALL_ORDER = 4
CLIP_TOL = 1e-12
TIE_TOL = 1e-10
COVER_TOL = 1e-9
_KIND_CODE = {"N0": 1, "RT0": 2, "P0": 3}


class Smoother:
    """A mollifier family on one domain: ``delta`` field, ball rule and map.

    ``zero_extension`` selects the expansion-map family (fields extended by
    zero) instead of the shrinking-map family.
    """

    def __init__(self, domain: StarDomain, delta: DeltaField, quad: BallQuadrature,
                 zero_extension: bool = False, radius: Optional[float] = None,
                 zeta: Optional[float] = None):
        self.domain = domain
        self.delta = delta
        self.quad = quad
        self.zero_extension = bool(zero_extension)
        if zero_extension:
            self.map = ExpandMap(domain, ExpandMap.default(domain).zeta if zeta is None else zeta)
            self.spread = self.map.zeta
        else:
            default = ShrinkMap.default(domain, variable_delta=not delta.is_uniform)
            self.map = ShrinkMap(domain, default.radius if radius is None else radius)
            self.spread = self.map.radius

    @property
    def uniform(self) -> bool:
        return self.delta.is_uniform

    def affine_maps(self):
        """``(alpha, shifts, weights)`` of the sampling maps for uniform delta."""
        d = self.delta.uniform_value
        k = self.domain.kappa
        sign = 1.0 if self.zero_extension else -1.0
        alpha = 1.0 + sign * d * k
        shifts = -sign * d * k * self.domain.star_center[None, :] + d * self.spread * self.quad.nodes
        return alpha, shifts, self.quad.kernel_weights

    def variant(self, tag: str) -> MollifierVariant:
        return MollifierVariant(tag, self.zero_extension)

    def mollified(self, tag: str, field) -> MollifiedField:
        return MollifiedField(self.variant(tag), field, self.delta, self.quad, self.map)


# ------------------------------------------------------------------ kernels
_PAIR_TO_EDGE = np.full((4, 4), -1, dtype=np.int64)
for _e, (_i, _j) in enumerate(LOCAL_EDGES):
    _PAIR_TO_EDGE[_i, _j] = _PAIR_TO_EDGE[_j, _i] = _e


@numba.njit(cache=True)
def _lam(bg, v0, c, p, out):
    for k in range(4):
        s = bg[c, k, 0] * (p[0] - v0[0]) + bg[c, k, 1] * (p[1] - v0[1]) + bg[c, k, 2] * (p[2] - v0[2])
        out[k] = s + (1.0 if k == 0 else 0.0)


@numba.njit(cache=True)
def _plane(bg, v0, c, k, g):
    g[0] = bg[c, k, 0]
    g[1] = bg[c, k, 1]
    g[2] = bg[c, k, 2]
    return (1.0 if k == 0 else 0.0) - (g[0] * v0[0] + g[1] * v0[1] + g[2] * v0[2])


@numba.njit(cache=True)
def _domain_measure(kind, X, dom_g, dom_c, tol, poly, pbuf, soup, sbuf):
    """Measure of the image simplex inside the domain (param length for segments)."""
    if kind == 1:
        t0, t1 = 0.0, 1.0
        for i in range(dom_g.shape[0]):
            t0, t1 = clip.clip_interval(clip.affine(dom_g[i], dom_c[i], X[0]),
                                        clip.affine(dom_g[i], dom_c[i], X[1]), t0, t1, tol)
        return max(t1 - t0, 0.0)
    if kind == 2:
        for k in range(3):
            poly[k] = X[k]
        n = 3
        for i in range(dom_g.shape[0]):
            n = clip.clip_polygon(poly, n, dom_g[i], dom_c[i], tol, pbuf)
            for k in range(n):
                poly[k] = pbuf[k]
            if n < 3:
                return 0.0
        A, C = clip.polygon_area_centroid(poly, n)
        return np.sqrt(A[0] ** 2 + A[1] ** 2 + A[2] ** 2)
    for k in range(4):
        soup[0, k] = X[k]
    n = 1
    for i in range(dom_g.shape[0]):
        n = clip.clip_tets(soup, n, dom_g[i], dom_c[i], tol, sbuf)
        if n < 0:
            return -1.0
        for s in range(n):
            soup[s] = sbuf[s]
    v = 0.0
    for s in range(n):
        v += clip.tet_volume(soup[s])
    return v


@numba.njit(cache=True)
def _rows_kernel(kind, row_vids, row_sign, alpha, shifts, W,
                 verts, cells_sorted, bg, volumes, neighbors, edge_min, pair_to_edge,
                 vc, vc_ptr, col_dofs, col_signs, ncols,
                 dom_g, dom_c, zero_ext, tol, tie_tol, cover_tol, cap,
                 out_r, out_c, out_v, row_base):
    R = row_vids.shape[0]
    nv = row_vids.shape[1]
    T = cells_sorted.shape[0]
    nq = shifts.shape[0]
    mark = -np.ones(T, dtype=np.int64)
    cand = np.empty(4096, dtype=np.int64)
    colpos = -np.ones(ncols, dtype=np.int64)
    tcols = np.empty(cap, dtype=np.int64)
    tvals = np.zeros(cap)
    X = np.empty((nv, 3))
    lam = np.empty(4)
    lam0 = np.empty(4)
    lam1 = np.empty(4)
    g = np.empty(3)
    poly = np.empty((clip.POLY_CAP, 3))
    pbuf = np.empty((clip.POLY_CAP, 3))
    soup = np.empty((clip.TET_CAP, 4, 3))
    sbuf = np.empty((clip.TET_CAP, 4, 3))
    lv = np.empty((clip.POLY_CAP, 4))
    nout = 0
    for r in range(R):
        # candidate cells: union of the vertex stars of the entity
        nc = 0
        for a in range(nv):
            v = row_vids[r, a]
            for s in range(vc_ptr[v], vc_ptr[v + 1]):
                c = vc[s]
                if mark[c] != r + row_base:
                    mark[c] = r + row_base
                    cand[nc] = c
                    nc += 1
        cs = np.sort(cand[:nc])
        nt = 0
        for q in range(nq):
            for a in range(nv):
                for d in range(3):
                    X[a, d] = alpha * verts[row_vids[r, a], d] + shifts[q, d]
            if kind == 1:
                full = 1.0
            elif kind == 2:
                A0, C0 = clip.polygon_area_centroid(X, 3)
                full = np.sqrt(A0[0] ** 2 + A0[1] ** 2 + A0[2] ** 2)
            else:
                full = clip.tet_volume(X)
            if zero_ext:
                expect = _domain_measure(kind, X, dom_g, dom_c, tol, poly, pbuf, soup, sbuf)
                if expect < 0:
                    return -2, r
            else:
                expect = full
            kept = 0.0
            for ci in range(nc):
                c = cs[ci]
                v0 = verts[cells_sorted[c, 0]]
                # quick rejection by a separating face plane
                sep = False
                for k in range(4):
                    cst = _plane(bg, v0, c, k, g)
                    allout = True
                    for a in range(nv):
                        if clip.affine(g, cst, X[a]) >= -tol:
                            allout = False
                            break
                    if allout:
                        sep = True
                        break
                if sep:
                    continue
                if kind == 1:
                    t0, t1 = 0.0, 1.0
                    for k in range(4):
                        cst = _plane(bg, v0, c, k, g)
                        t0, t1 = clip.clip_interval(clip.affine(g, cst, X[0]), clip.affine(g, cst, X[1]), t0, t1, tol)
                    if t1 <= t0:
                        continue
                    P0 = X[0] + t0 * (X[1] - X[0])
                    P1 = X[0] + t1 * (X[1] - X[0])
                    _lam(bg, v0, c, P0, lam0)
                    _lam(bg, v0, c, P1, lam1)
                    nz = 0
                    z0 = -1
                    z1 = -1
                    for k in range(4):
                        if abs(lam0[k]) <= tie_tol and abs(lam1[k]) <= tie_tol:
                            if nz == 0:
                                z0 = k
                            else:
                                z1 = k
                            nz += 1
                    if nz == 1:
                        nb = neighbors[c, z0]
                        if nb >= 0 and nb < c:
                            continue
                    elif nz == 2:
                        i = -1
                        j = -1
                        for k in range(4):
                            if k != z0 and k != z1:
                                if i < 0:
                                    i = k
                                else:
                                    j = k
                        if edge_min[c, pair_to_edge[i, j]] != c:
                            continue
                    elif nz > 2:
                        continue
                    kept += t1 - t0
                    seg = P1 - P0
                    for k in range(4):
                        lam[k] = 0.5 * (lam0[k] + lam1[k])
                    for e in range(6):
                        col = col_dofs[c, e]
                        if col < 0:
                            continue
                        if e == 0:
                            i, j = 0, 1
                        elif e == 1:
                            i, j = 0, 2
                        elif e == 2:
                            i, j = 0, 3
                        elif e == 3:
                            i, j = 1, 2
                        elif e == 4:
                            i, j = 1, 3
                        else:
                            i, j = 2, 3
                        val = 0.0
                        for d in range(3):
                            val += (lam[i] * bg[c, j, d] - lam[j] * bg[c, i, d]) * seg[d]
                        val *= W[q] * col_signs[c, e]
                        p = colpos[col]
                        if p < 0:
                            if nt >= cap:
                                return -1, r
                            p = nt
                            colpos[col] = p
                            tcols[p] = col
                            tvals[p] = 0.0
                            nt += 1
                        tvals[p] += val
                elif kind == 2:
                    for a in range(3):
                        poly[a] = X[a]
                    n = 3
                    for k in range(4):
                        cst = _plane(bg, v0, c, k, g)
                        n = clip.clip_polygon(poly, n, g, cst, tol, pbuf)
                        for a in range(n):
                            poly[a] = pbuf[a]
                        if n < 3:
                            break
                    if n < 3:
                        continue
                    A, C = clip.polygon_area_centroid(poly, n)
                    area = np.sqrt(A[0] ** 2 + A[1] ** 2 + A[2] ** 2)
                    if area <= 0.0:
                        continue
                    skip = False
                    for k in range(4):
                        allz = True
                        for a in range(n):
                            _lam(bg, v0, c, poly[a], lam)
                            if abs(lam[k]) > tie_tol:
                                allz = False
                                break
                        if allz:
                            nb = neighbors[c, k]
                            if nb >= 0 and nb < c:
                                skip = True
                            break
                    if skip:
                        continue
                    kept += area
                    for f in range(4):
                        col = col_dofs[c, f]
                        if col < 0:
                            continue
                        xf = verts[cells_sorted[c, f]]
                        val = 0.0
                        for d in range(3):
                            val += (C[d] - xf[d]) * A[d]
                        val *= W[q] * col_signs[c, f] * row_sign[r] / (3.0 * volumes[c])
                        p = colpos[col]
                        if p < 0:
                            if nt >= cap:
                                return -1, r
                            p = nt
                            colpos[col] = p
                            tcols[p] = col
                            tvals[p] = 0.0
                            nt += 1
                        tvals[p] += val
                else:
                    for a in range(4):
                        soup[0, a] = X[a]
                    n = 1
                    for k in range(4):
                        cst = _plane(bg, v0, c, k, g)
                        n = clip.clip_tets(soup, n, g, cst, tol, sbuf)
                        if n < 0:
                            return -2, r
                        for s in range(n):
                            soup[s] = sbuf[s]
                        if n == 0:
                            break
                    vol = 0.0
                    for s in range(n):
                        vol += clip.tet_volume(soup[s])
                    if vol <= 0.0:
                        continue
                    kept += vol
                    col = col_dofs[c, 0]
                    if col < 0:
                        continue
                    p = colpos[col]
                    if p < 0:
                        if nt >= cap:
                            return -1, r
                        p = nt
                        colpos[col] = p
                        tcols[p] = col
                        tvals[p] = 0.0
                        nt += 1
                    tvals[p] += W[q] * vol / volumes[c]
            scale = full if full > 0 else 1.0
            if abs(kept - expect) > cover_tol * scale:
                return -3, r
        for p in range(nt):
            out_r[nout] = r + row_base
            out_c[nout] = tcols[p]
            out_v[nout] = tvals[p]
            nout += 1
            colpos[tcols[p]] = -1
    return nout, -1


def _edge_min_table(mesh):
    em = np.full(mesh.n_edges, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(em, mesh.cell_edges.ravel(), np.repeat(np.arange(mesh.n_cells), 6))
    return em[mesh.cell_edges]


def _mesh_tables(mesh):
    tabs = getattr(mesh, "_clip_tables", None)
    if tabs is None:
        tabs = dict(edge_min=_edge_min_table(mesh))
        mesh._clip_tables = tabs
    return tabs


def assemble_exact(space: FESpace, sm: Smoother, chunk: int = 2048) -> sps.csr_matrix:
    """Matrix of ``I_h K_delta`` on ``space`` for uniform delta, by exact clipping."""
    if not sm.uniform:
        raise ParameterError("exact assembly needs a uniform delta")
    mesh = space.mesh
    alpha, shifts, W = sm.affine_maps()
    if space.kind == "P1":
        return _assemble_p1(space, sm, alpha, shifts, W)
    tabs = _mesh_tables(mesh)
    rows = space.free
    if space.kind == "N0":
        vids = mesh.edges[rows]
        rsign = np.ones(len(rows))
    elif space.kind == "RT0":
        vids = mesh.faces[rows]
        rsign = mesh.face_sign[rows].astype(float)
    else:
        vids = mesh.cells_sorted[rows]
        rsign = np.ones(len(rows))
    kind = _KIND_CODE[space.kind]
    dom = sm.domain
    cap = 1024
    parts_r, parts_c, parts_v = [], [], []
    for s in range(0, len(rows), chunk):
        R = min(chunk, len(rows) - s)
        out_r = np.empty(R * cap, dtype=np.int64)
        out_c = np.empty(R * cap, dtype=np.int64)
        out_v = np.empty(R * cap)
        n, bad = _rows_kernel(
            kind, np.ascontiguousarray(vids[s : s + R]), rsign[s : s + R], float(alpha),
            np.ascontiguousarray(shifts), np.ascontiguousarray(W),
            mesh.vertices, mesh.cells_sorted, mesh.bary_grad, mesh.volumes, mesh.cell_neighbors,
            tabs["edge_min"], _PAIR_TO_EDGE, mesh.vertex_cells, mesh.vertex_cells_ptr,
            space.cell_dofs, space.cell_signs, space.dim,
            -dom.normals, dom.offsets, sm.zero_extension, CLIP_TOL, TIE_TOL, COVER_TOL, cap,
            out_r, out_c, out_v, s,
        )
        if n == -3:
            raise InclusionError(
                f"image of dof entity {rows[s + bad]} is not covered by the neighbouring cells; "
                "delta is too large for the mesh"
            )
        if n < 0:
            raise RuntimeError(f"assembly buffer overflow (code {n}) at row {s + bad}")
        parts_r.append(out_r[:n])
        parts_c.append(out_c[:n])
        parts_v.append(out_v[:n])
    r = np.concatenate(parts_r)
    c = np.concatenate(parts_c)
    v = np.concatenate(parts_v)
    return sps.csr_matrix((v, (r, c)), shape=(space.dim, space.dim))


def _assemble_p1(space, sm, alpha, shifts, W):
    mesh = space.mesh
    rows = space.free
    pts = alpha * mesh.vertices[rows][:, None, :] + shifts[None, :, :]
    flat = pts.reshape(-1, 3)
    inside = domain_contains(sm.domain, flat)
    if not sm.zero_extension and not inside.all():
        raise InclusionError("a vertex sample left the domain; delta is too large")
    cells, _ = mesh.locate(flat)
    miss = inside & (cells < 0)
    if miss.any():
        from cqinterp.fespace import _locate_loose

        cells[miss] = _locate_loose(mesh, flat[miss])
        if np.any(cells[miss] < 0):
            raise InclusionError("a vertex sample inside the domain is not covered by the mesh")
    ok = inside & (cells >= 0)
    idx = np.flatnonzero(ok)
    lam = mesh.barycentric(cells[idx], flat[idx])
    row = np.repeat(np.arange(len(rows)), len(W))[idx]
    wq = np.tile(W, len(rows))[idx]
    cols = space.cell_dofs[cells[idx]]
    vals = lam * wq[:, None]
    keep = cols >= 0
    R = np.broadcast_to(row[:, None], cols.shape)
    return sps.csr_matrix((vals[keep], (R[keep], cols[keep])), shape=(space.dim, space.dim))


def assemble_pointwise(space: FESpace, sm: Smoother, npts: int = 4) -> sps.csr_matrix:
    """Matrix of ``I_h K_delta`` by quadrature of the pointwise mollified basis.

    Works for any delta field; for uniform delta it is an approximation of
    :func:`assemble_exact` limited by the dof quadrature (the mollified basis
    functions have kinks).
    """
    cols = []
    for j in range(space.dim):
        e = np.zeros(space.dim)
        e[j] = 1.0
        u = FEFunction(space, e)
        cols.append(smoothed_dofs(space, sm, _PlainField(u), npts=npts))
    return sps.csr_matrix(np.array(cols).T)


class _PlainField:
    """Hide the FE structure of a function so it is treated as a generic field."""

    def __init__(self, f):
        self.f = f
        self.rank = f.rank

    def __call__(self, x):
        return self.f(x)


# ------------------------------------------------------ right-hand sides
def smoothed_dofs(space: FESpace, sm: Smoother, field, npts: int = DEFAULT_DOF_POINTS,
                  matrix: Optional[sps.csr_matrix] = None) -> np.ndarray:
    """Coefficients of ``I_h K_delta field`` on ``space``.

    Finite element functions of the same space use the exact matrix (pass it
    as ``matrix`` to avoid reassembly).
    """
    if isinstance(field, FEFunction) and sm.uniform:
        src = field.space
        if src.mesh is space.mesh and src.kind == space.kind:
            if src.dim == space.dim and np.array_equal(src.free, space.free):
                M = assemble_exact(space, sm) if matrix is None else matrix
                return M @ field.coeffs
            full = FESpace(space.mesh, space.kind, False)
            return (assemble_exact(full, sm) @ field._entity_coeffs)[space.free]
    if not sm.uniform:
        return apply_entity_dofs(space, sm.mollified(space.tag, field), npts)
    alpha, shifts, W = sm.affine_maps()
    simp, normals = entity_simplices(space)
    R, nq = len(simp), len(W)
    kind = space.kind
    out = np.zeros(R, dtype=float)
    per = max(1, 300_000 // (nq * max(1, npts ** max(simp.shape[1] - 1, 0))))
    dom = sm.domain
    for s in range(0, R, per):
        S = simp[s : s + per]
        imgs = alpha * S[:, None, :, :] + shifts[None, :, None, :]
        flat = imgs.reshape(-1, S.shape[1], 3)
        nrm = None if normals is None else np.repeat(normals[s : s + per], nq, axis=0)
        inside = domain_contains(dom, flat.reshape(-1, 3)).reshape(len(flat), -1).all(axis=1)
        vals = np.zeros(len(flat))
        if not sm.zero_extension and not inside.all():
            raise InclusionError("an image entity left the domain; delta is too large")
        if inside.any():
            vals[inside] = np.real(apply_dofs(kind, flat[inside], field, npts,
                                              None if nrm is None else nrm[inside]))
        for k in np.flatnonzero(~inside):
            vals[k] = _clipped_dof(kind, flat[k], field, npts, None if nrm is None else nrm[k], dom)
        out[s : s + per] = vals.reshape(len(S), nq) @ W
    return out


def _clipped_dof(kind, simplex, field, npts, normal, dom):
    if kind == "P1":
        return 0.0
    pieces, meas = clip.clip_simplex(simplex, dom.normals, dom.offsets, CLIP_TOL)
    keep = meas > 0
    if not keep.any():
        return 0.0
    pieces = pieces[keep]
    nrm = None if normal is None else np.repeat(normal[None], len(pieces), axis=0)
    return float(np.sum(np.real(apply_dofs(kind, pieces, field, npts, nrm))))


def apply_entity_dofs(space: FESpace, field, npts: int = DEFAULT_DOF_POINTS) -> np.ndarray:
    simp, normals = entity_simplices(space)
    return np.real(apply_dofs(space.kind, simp, field, npts, normals))
