"""Tetrahedral meshes: connectivity, affine cell maps, point location, meshsize field.

Orientation conventions used throughout the package:

* edges are oriented from the lower to the higher global vertex id;
* a face with sorted vertices ``(a, b, c)`` carries the unit normal
  ``sign * (x_b - x_a) x (x_c - x_a) / |...|`` where ``sign`` (``face_sign``)
  is -1 only for boundary faces whose natural normal points inward, so
  boundary normals are always outward;
* ``face_cells[f] = (K_l, K_r)`` with the normal pointing from ``K_l`` to
  ``K_r``; ``K_r = -1`` on the boundary.

Cell-local quantities are indexed in *sorted* local order (local vertex ``k``
is the ``k``-th smallest global id of the cell).  Local edges are
``(0,1),(0,2),(0,3),(1,2),(1,3),(2,3)`` and local face ``k`` is opposite
local vertex ``k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from cqinterp.errors import MeshParseError, StructuralError

LOCAL_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
LOCAL_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
BARY_TOL = 1e-12


def _signed_volumes(vertices, cells):
    v = vertices[cells]
    return np.linalg.det(np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2)) / 6.0


class SimplicialMesh:
    """Matching tetrahedral mesh with full connectivity.

    Construct with :meth:`from_arrays` (which repairs negatively oriented
    cells) or :func:`generate_cube_mesh`.
    """

    def __init__(self, vertices, cells, repaired_cells=()):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.cells = np.ascontiguousarray(cells, dtype=np.int64)
        self.repaired_cells = tuple(int(c) for c in repaired_cells)
        self._locator = None
        self._meshsize = None
        self._build()

    @classmethod
    def from_arrays(cls, vertices, cells):
        vertices = np.asarray(vertices, dtype=float)
        cells = np.array(cells, dtype=np.int64, copy=True)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise StructuralError("vertices must have shape (N, 3)")
        if cells.ndim != 2 or cells.shape[1] != 4:
            raise StructuralError("cells must have shape (M, 4)")
        if cells.min() < 0 or cells.max() >= len(vertices):
            raise StructuralError("cell references a vertex id out of range")
        vol = _signed_volumes(vertices, cells)
        if np.any(vol == 0):
            raise StructuralError("degenerate cell with zero volume")
        bad = np.flatnonzero(vol < 0)
        cells[bad, 2], cells[bad, 3] = cells[bad, 3].copy(), cells[bad, 2].copy()
        return cls(vertices, cells, repaired_cells=bad)

    # ------------------------------------------------------------------ build
    def _build(self):
        V, T = len(self.vertices), len(self.cells)
        if len(np.unique(np.sort(self.cells, axis=1), axis=0)) != T or np.any(
            np.diff(np.sort(self.cells, axis=1), axis=1) == 0
        ):
            raise StructuralError("repeated cell or repeated vertex within a cell")
        self.perm = np.argsort(self.cells, axis=1, kind="stable")
        self.cells_sorted = np.take_along_axis(self.cells, self.perm, axis=1)
        cs = self.cells_sorted

        pairs = cs[:, LOCAL_EDGES].reshape(-1, 2)
        key = pairs[:, 0] * V + pairs[:, 1]
        ukey, inv = np.unique(key, return_inverse=True)
        self.edges = np.stack([ukey // V, ukey % V], axis=1)
        self.cell_edges = inv.reshape(T, 6)

        tri = cs[:, LOCAL_FACES].reshape(-1, 3)
        key = (tri[:, 0] * V + tri[:, 1]) * V + tri[:, 2]
        ukey, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
        if counts.max() > 2:
            raise StructuralError("non-matching mesh: a face is shared by more than two cells")
        self.faces = np.stack([ukey // (V * V), (ukey // V) % V, ukey % V], axis=1)
        self.cell_faces = inv.reshape(T, 4)
        F = len(self.faces)

        x = self.vertices
        a, b, c = (x[self.faces[:, i]] for i in range(3))
        raw = np.cross(b - a, c - a)
        area2 = np.linalg.norm(raw, axis=1)
        self.face_areas = 0.5 * area2
        normal = raw / area2[:, None]

        # owners: for each (cell, local face) decide the side of the normal
        flat_cell = np.repeat(np.arange(T), 4)
        flat_face = self.cell_faces.ravel()
        opp = x[cs.ravel()]
        side = np.einsum("ij,ij->i", opp - a[flat_face], normal[flat_face])
        out_of_cell = side < 0  # natural normal points away from the cell
        face_cells = -np.ones((F, 2), dtype=np.int64)
        face_cells[flat_face[out_of_cell], 0] = flat_cell[out_of_cell]
        face_cells[flat_face[~out_of_cell], 1] = flat_cell[~out_of_cell]
        boundary = counts == 1
        if np.any(counts[~boundary] != 2) or np.any((face_cells[~boundary] < 0).any(axis=1)):
            raise StructuralError("non-matching mesh: inconsistent face ownership")
        flip = boundary & (face_cells[:, 0] < 0)
        face_cells[flip, 0] = face_cells[flip, 1]
        face_cells[flip, 1] = -1
        self.face_sign = np.where(flip, -1, 1).astype(np.int64)
        self.face_normals = normal * self.face_sign[:, None]
        self.face_cells = face_cells
        self.boundary_faces = np.flatnonzero(boundary)
        self.is_boundary_face = boundary

        # cell/face orientation: +1 if the face normal is outward from the cell
        self.cell_face_signs = np.where(
            face_cells[self.cell_faces, 0] == np.arange(T)[:, None], 1, -1
        ).astype(np.int64)

        bf = self.faces[boundary]
        self.is_boundary_vertex = np.zeros(V, dtype=bool)
        self.is_boundary_vertex[bf.ravel()] = True
        ekey = self.edges[:, 0] * V + self.edges[:, 1]
        bedge = np.concatenate([bf[:, [0, 1]], bf[:, [0, 2]], bf[:, [1, 2]]])
        bkey, bcount = np.unique(bedge[:, 0] * V + bedge[:, 1], return_counts=True)
        if bkey.size and np.any(bcount != 2):
            raise StructuralError("non-matching mesh: boundary surface is not closed")
        self.is_boundary_edge = np.isin(ekey, bkey)

        # face -> edge incidence in the face's own orientation
        fe = np.stack([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [0, 2]]], axis=1)
        fkey = fe[..., 0] * V + fe[..., 1]
        self.face_edges = np.searchsorted(ekey, fkey)
        self.face_edge_signs = np.array([1, 1, -1])[None, :] * self.face_sign[:, None]

        # affine maps on positively oriented cells
        v = x[self.cells]
        self.cell_origin = v[:, 0].copy()
        self.jacobians = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2)
        self.det = np.linalg.det(self.jacobians)
        if np.any(self.det <= 0):
            raise StructuralError("cell with non-positive orientation")
        self.volumes = self.det / 6.0
        self.jacobians_inv = np.linalg.inv(self.jacobians)
        # barycentric gradients in sorted local order
        g = np.empty((T, 4, 3))
        g[:, 1:, :] = self.jacobians_inv
        g[:, 0, :] = -self.jacobians_inv.sum(axis=1)
        self.bary_grad = np.take_along_axis(g, self.perm[:, :, None], axis=1)
        vs = x[cs]
        le = vs[:, LOCAL_EDGES[:, 1]] - vs[:, LOCAL_EDGES[:, 0]]
        self.diameters = np.linalg.norm(le, axis=2).max(axis=1)
        surf = self.face_areas[self.cell_faces].sum(axis=1)
        self.inradii = 3.0 * self.volumes / surf

        order = np.argsort(self.cells.ravel(), kind="stable")
        self.vertex_cells = order // 4
        self.vertex_cells_ptr = np.concatenate(
            [[0], np.cumsum(np.bincount(self.cells.ravel(), minlength=V))]
        )

        # neighbour across local face k (sorted order), -1 on the boundary
        fc = face_cells[self.cell_faces]
        me = np.arange(T)[:, None]
        self.cell_neighbors = np.where(fc[..., 0] == me, fc[..., 1], fc[..., 0])

    # ----------------------------------------------------------------- counts
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def n_cells(self):
        return len(self.cells)

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces - self.n_cells

    def vertex_star(self, v):
        return self.vertex_cells[self.vertex_cells_ptr[v] : self.vertex_cells_ptr[v + 1]]

    def cell_patch(self, k) -> np.ndarray:
        """Cells sharing at least one vertex with cell ``k`` (includes ``k``)."""
        return np.unique(np.concatenate([self.vertex_star(v) for v in self.cells[k]]))

    def shape_regularity(self) -> float:
        return float(np.max(self.diameters / self.inradii))

    @property
    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    # ------------------------------------------------------- point evaluation
    def barycentric(self, cells, x) -> np.ndarray:
        """Barycentric coordinates (sorted local order) of ``x`` in ``cells``.

        Affine in ``x``, so complex input is propagated.
        """
        rel = np.asarray(x) - self.vertices[self.cells_sorted[cells, 0]]
        lam = np.einsum("nij,nj->ni", self.bary_grad[cells], rel)
        lam[:, 0] += 1.0
        return lam

    @property
    def locator(self):
        if self._locator is None:
            self._locator = _BackgroundGrid(self)
        return self._locator

    def locate(self, x):
        """Vectorised point location: ``(cells, barycentric)``; cell -1 if outside."""
        x = np.asarray(x)
        single = x.ndim == 1
        pts = np.ascontiguousarray(np.real(np.atleast_2d(x)), dtype=float)
        cells = self.locator.locate(pts)
        lam = np.full((len(pts), 4), np.nan)
        ok = cells >= 0
        if ok.any():
            lam[ok] = self.barycentric(cells[ok], pts[ok])
        if single:
            return int(cells[0]), lam[0]
        return cells, lam

    # --------------------------------------------------------------- meshsize
    @property
    def meshsize(self) -> "MeshsizeField":
        if self._meshsize is None:
            self._meshsize = meshsize_field(self)
        return self._meshsize


def locate_point(m: SimplicialMesh, x):
    """Cell id and barycentric coordinates of ``x``, or ``None`` outside the mesh."""
    c, lam = m.locate(np.asarray(x, dtype=float))
    if c < 0:
        return None
    return c, lam


def build_connectivity(m: SimplicialMesh) -> SimplicialMesh:
    """Connectivity is built on construction; kept for API symmetry."""
    return m


# --------------------------------------------------------------- location grid
@numba.njit(cache=True)
def _fill_buckets(lo_idx, hi_idx, dims, counts_only, ptr, out):
    T = lo_idx.shape[0]
    nb = dims[0] * dims[1] * dims[2]
    cnt = np.zeros(nb, dtype=np.int64)
    for c in range(T):
        for i in range(lo_idx[c, 0], hi_idx[c, 0] + 1):
            for j in range(lo_idx[c, 1], hi_idx[c, 1] + 1):
                for k in range(lo_idx[c, 2], hi_idx[c, 2] + 1):
                    b = (i * dims[1] + j) * dims[2] + k
                    if not counts_only:
                        out[ptr[b] + cnt[b]] = c
                    cnt[b] += 1
    return cnt


@numba.njit(cache=True)
def _locate(points, origin, inv_size, dims, ptr, bucket_cells, v0, grad, tol):
    n = points.shape[0]
    res = -np.ones(n, dtype=np.int64)
    for p in range(n):
        idx = np.empty(3, dtype=np.int64)
        outside = False
        for d in range(3):
            t = (points[p, d] - origin[d]) * inv_size[d]
            if t < -1e-9 or t > dims[d] + 1e-9:
                outside = True
            ti = int(np.floor(t))
            idx[d] = min(max(ti, 0), dims[d] - 1)
        if outside:
            continue
        b = (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]
        for s in range(ptr[b], ptr[b + 1]):
            c = bucket_cells[s]
            r0 = points[p, 0] - v0[c, 0]
            r1 = points[p, 1] - v0[c, 1]
            r2 = points[p, 2] - v0[c, 2]
            ok = True
            lsum = 0.0
            for a in range(1, 4):
                lam = grad[c, a, 0] * r0 + grad[c, a, 1] * r1 + grad[c, a, 2] * r2
                lsum += lam
                if lam < -tol:
                    ok = False
                    break
            if ok and 1.0 - lsum >= -tol:
                res[p] = c
                break
    return res


class _BackgroundGrid:
    """Uniform bucket grid over the mesh bounding box; buckets list cells by id."""

    def __init__(self, m: SimplicialMesh):
        lo, hi = m.bounding_box
        span = hi - lo
        pad = 1e-9 * max(span.max(), 1.0)
        self.origin = lo - pad
        span = span + 2 * pad
        per_axis = max(1, int(round(len(m.cells) ** (1.0 / 3.0) / 1.5)))
        self.dims = np.maximum(1, np.round(per_axis * span / span.max())).astype(np.int64)
        self.inv_size = self.dims / span
        v = m.vertices[m.cells]
        eps = 1e-12 * span.max()
        lo_idx = np.floor((v.min(axis=1) - eps - self.origin) * self.inv_size).astype(np.int64)
        hi_idx = np.floor((v.max(axis=1) + eps - self.origin) * self.inv_size).astype(np.int64)
        lo_idx = np.clip(lo_idx, 0, self.dims - 1)
        hi_idx = np.clip(hi_idx, 0, self.dims - 1)
        nb = int(np.prod(self.dims))
        dummy = np.zeros(nb + 1, dtype=np.int64)
        counts = _fill_buckets(lo_idx, hi_idx, self.dims, True, dummy, np.zeros(1, dtype=np.int64))
        self.ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.cells = np.empty(self.ptr[-1], dtype=np.int64)
        _fill_buckets(lo_idx, hi_idx, self.dims, False, self.ptr, self.cells)
        # cells are visited in increasing id, so each bucket is sorted
        # sorted local order is irrelevant here: use positive-order gradients
        g = np.empty((len(m.cells), 4, 3))
        g[:, 1:, :] = m.jacobians_inv
        g[:, 0, :] = -m.jacobians_inv.sum(axis=1)
        self.grad = g
        self.v0 = m.cell_origin

    def locate(self, pts):
        return _locate(pts, self.origin, self.inv_size, self.dims, self.ptr, self.cells, self.v0, self.grad, BARY_TOL)


# ------------------------------------------------------------------- meshsize
@dataclass
class MeshsizeField:
    """Continuous P1 field with vertex values = mean diameter of incident cells."""

    mesh: SimplicialMesh = field(repr=False)
    vertex_values: np.ndarray = field(repr=False)
    lower_ratio: float = 0.0
    upper_ratio: float = 0.0
    lipschitz: float = 0.0

    @property
    def max_value(self) -> float:
        return float(self.vertex_values.max())

    @property
    def is_constant(self) -> bool:
        v = self.vertex_values
        return bool(np.ptp(v) <= 1e-14 * v.max())

    def cell_gradients(self) -> np.ndarray:
        m = self.mesh
        return np.einsum("tk,tkj->tj", self.vertex_values[m.cells_sorted], m.bary_grad)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x)
        shape = x.shape[:-1]
        pts = x.reshape(-1, 3)
        cells, _ = self.mesh.locate(np.real(pts))
        if np.any(cells < 0):
            raise ValueError("meshsize evaluated outside the mesh")
        lam = self.mesh.barycentric(cells, pts)
        return np.sum(lam * self.vertex_values[self.mesh.cells_sorted[cells]], axis=1).reshape(shape)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x)
        shape = x.shape[:-1]
        cells, _ = self.mesh.locate(np.real(x.reshape(-1, 3)))
        if np.any(cells < 0):
            raise ValueError("meshsize evaluated outside the mesh")
        return self._grads[cells].reshape(shape + (3,))

    def __post_init__(self):
        self._grads = self.cell_gradients()


def meshsize_field(m: SimplicialMesh) -> MeshsizeField:
    sums = np.bincount(m.cells.ravel(), weights=np.repeat(m.diameters, 4), minlength=m.n_vertices)
    cnt = np.bincount(m.cells.ravel(), minlength=m.n_vertices)
    vals = sums / cnt
    # P1 extrema per cell sit at vertices
    vk = vals[m.cells]
    lower = float(np.min(vk.min(axis=1) / m.diameters))
    upper = float(np.max(vk.max(axis=1) / m.diameters))
    f = MeshsizeField(m, vals, lower, upper)
    f.lipschitz = float(np.linalg.norm(f._grads, axis=1).max())
    return f


# ----------------------------------------------------------------- generators
def _kuhn_cells(n, index):
    """Six tetrahedra per subcube along the monotone lattice paths."""
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    steps = np.array([index(1, 0, 0), index(0, 1, 0), index(0, 0, 1)])
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    base = index(i.ravel(), j.ravel(), k.ravel())
    out = []
    for p in perms:
        v1 = base + steps[p[0]]
        v2 = v1 + steps[p[1]]
        v3 = v2 + steps[p[2]]
        out.append(np.stack([base, v1, v2, v3], axis=1))
    return np.stack(out, axis=1).reshape(-1, 4)


def generate_cube_mesh(n: int, grading: float = 1.0) -> SimplicialMesh:
    """Kuhn subdivision of the unit cube into ``6 n^3`` tetrahedra.

    ``grading > 1`` maps each coordinate ``t -> t**grading``, refining towards
    the origin corner while keeping the connectivity.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    t = np.linspace(0.0, 1.0, n + 1) ** grading
    X, Y, Z = np.meshgrid(t, t, t, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    m1 = n + 1

    def index(i, j, k):
        return (np.asarray(i) * m1 + np.asarray(j)) * m1 + np.asarray(k)

    cells = _kuhn_cells(n, index)
    return SimplicialMesh.from_arrays(verts, cells)


# ------------------------------------------------------------------------- IO
def write_mesh(m: SimplicialMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write("tetmesh 3\n")
        fh.write(f"vertices {m.n_vertices}\n")
        for x in m.vertices:
            fh.write(" ".join(f"{c:.17g}" for c in x) + "\n")
        fh.write(f"cells {m.n_cells}\n")
        for c in m.cells:
            fh.write(" ".join(str(int(i)) for i in c) + "\n")


def read_mesh(path) -> SimplicialMesh:
    with open(path) as fh:
        lines = fh.read().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise MeshParseError("unexpected end of file", pos + 1)
        pos += 1
        return pos, lines[pos - 1].split()

    ln, tok = next_line()
    if tok != ["tetmesh", "3"]:
        raise MeshParseError("expected header 'tetmesh 3'", ln)

    def count(keyword):
        ln, tok = next_line()
        if len(tok) != 2 or tok[0] != keyword:
            raise MeshParseError(f"expected '{keyword} <count>'", ln)
        try:
            n = int(tok[1])
        except ValueError:
            raise MeshParseError(f"bad {keyword} count {tok[1]!r}", ln) from None
        if n < 0:
            raise MeshParseError(f"negative {keyword} count", ln)
        return n

    nv = count("vertices")
    verts = np.empty((nv, 3))
    for i in range(nv):
        ln, tok = next_line()
        if len(tok) != 3:
            raise MeshParseError("vertex line needs 3 coordinates", ln)
        try:
            verts[i] = [float(t) for t in tok]
        except ValueError:
            raise MeshParseError("vertex coordinate is not a number", ln) from None
    nc = count("cells")
    cells = np.empty((nc, 4), dtype=np.int64)
    for i in range(nc):
        ln, tok = next_line()
        if len(tok) != 4:
            raise MeshParseError("cell line needs 4 vertex ids", ln)
        try:
            ids = [int(t) for t in tok]
        except ValueError:
            raise MeshParseError("cell vertex id is not an integer", ln) from None
        if min(ids) < 0 or max(ids) >= nv:
            raise MeshParseError(f"cell references vertex id outside [0, {nv})", ln)
        cells[i] = ids
    rest = [k for k in range(pos, len(lines)) if lines[k].strip()]
    if rest:
        raise MeshParseError("trailing content after cells", rest[0] + 1)
    try:
        return SimplicialMesh.from_arrays(verts, cells)
    except StructuralError as exc:
        raise MeshParseError(str(exc)) from None


# ------------------------------------------------------------ epsilon bounds
def point_dof_radius(m: SimplicialMesh) -> np.ndarray:
    """Per vertex: smallest height of the incident cells measured from it.

    A ball of that radius around the vertex meets only cells containing the
    vertex, so every segment from the vertex to a point of such a cell stays
    in the cell.
    """
    heights = 3.0 * m.volumes[:, None] / m.face_areas[m.cell_faces]  # sorted local order
    r = np.full(m.n_vertices, np.inf)
    np.minimum.at(r, m.cells_sorted.ravel(), heights.ravel())
    return r


def epsilon_max(m: SimplicialMesh, domain, radius: float) -> dict:
    """Largest mesh-scaled ``epsilon`` meeting the two reach conditions on samples.

    Condition a: the sampling ball of each vertex stays within
    ``c_min h_K`` of the vertex.  Condition b: for samples ``x`` in ``K`` the
    sampling ball stays inside the vertex patch of ``K``.
    """
    h = m.meshsize.vertex_values
    x = m.vertices
    reach_per_eps = h * (domain.kappa * np.linalg.norm(x - domain.star_center, axis=1) + radius)
    r_pt = point_dof_radius(m)
    c_min = 0.5 * float(np.min(r_pt[m.cells] / m.diameters[:, None]))
    hk = np.zeros(m.n_vertices)
    np.maximum.at(hk, m.cells.ravel(), np.repeat(m.diameters, 4))
    hk_min = np.full(m.n_vertices, np.inf)
    np.minimum.at(hk_min, m.cells.ravel(), np.repeat(m.diameters, 4))
    eps_a = float(np.min(c_min * hk_min / reach_per_eps))
    patch_clearance = _patch_clearance(m)
    hmax_cell = h[m.cells].max(axis=1)
    far = np.max(np.linalg.norm(x[m.cells] - domain.star_center, axis=2), axis=1)
    eps_b = float(np.min(patch_clearance / (hmax_cell * (domain.kappa * far + radius))))
    return {"c_min": c_min, "eps_a": eps_a, "eps_b": eps_b, "eps_max": min(eps_a, eps_b, 1.0 / h.max())}


@numba.njit(cache=True)
def _point_triangle_distance(p, a, b, c):
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return np.sqrt(ap @ ap)
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return np.sqrt(bp @ bp)
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        q = a + ab * (d1 / (d1 - d3))
        return np.sqrt((p - q) @ (p - q))
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return np.sqrt(cp @ cp)
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        q = a + ac * (d2 / (d2 - d6))
        return np.sqrt((p - q) @ (p - q))
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        q = b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)))
        return np.sqrt((p - q) @ (p - q))
    den = 1.0 / (va + vb + vc)
    q = a + ab * (vb * den) + ac * (vc * den)
    return np.sqrt((p - q) @ (p - q))


@numba.njit(cache=True)
def _clearance_kernel(x, cells, neighbors, faces_local, vc, vc_ptr, samples):
    T = cells.shape[0]
    mark = -np.ones(T, dtype=np.int64)
    out = np.full(T, np.inf)
    pts = np.empty((samples.shape[0], 3))
    for k in range(T):
        for s in range(samples.shape[0]):
            for d in range(3):
                acc = 0.0
                for a in range(4):
                    acc += samples[s, a] * x[cells[k, a], d]
                pts[s, d] = acc
        for a in range(4):
            v = cells[k, a]
            for t in range(vc_ptr[v], vc_ptr[v + 1]):
                mark[vc[t]] = k
        best = np.inf
        for a in range(4):
            v = cells[k, a]
            for t in range(vc_ptr[v], vc_ptr[v + 1]):
                c = vc[t]
                for f in range(4):
                    nb = neighbors[c, f]
                    if nb < 0 or mark[nb] == k:
                        continue
                    ia = cells[c, faces_local[f, 0]]
                    ib = cells[c, faces_local[f, 1]]
                    ic = cells[c, faces_local[f, 2]]
                    for s in range(pts.shape[0]):
                        dist = _point_triangle_distance(pts[s], x[ia], x[ib], x[ic])
                        if dist < best:
                            best = dist
        out[k] = best
    return out


def _patch_clearance(m: SimplicialMesh) -> np.ndarray:
    """Sampled distance from K to the part of its patch boundary inside the domain."""
    samples = [np.eye(4)[i] for i in range(4)]
    samples += [0.5 * (np.eye(4)[i] + np.eye(4)[j]) for i in range(4) for j in range(i + 1, 4)]
    samples += [np.full(4, 0.25)]
    samples += [(1.0 - np.eye(4)[i]) / 3.0 for i in range(4)]
    return _clearance_kernel(
        m.vertices, m.cells_sorted, m.cell_neighbors, LOCAL_FACES,
        m.vertex_cells, m.vertex_cells_ptr, np.array(samples),
    )
