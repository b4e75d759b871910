"""Lowest-order finite elements P1, N0 (edge), RT0 (face) and P0 on tetrahedra.

Degrees of freedom (global orientation from :mod:`cqinterp.mesh`):

* P1: value at the vertex;
* N0: ``int_0^1 v(a + t (b - a)) . (b - a) dt`` along the edge ``a -> b``;
* RT0: flux ``int_F v . n_F`` with the stored face normal;
* P0: cell integral ``int_K v``; the basis function is ``chi_K / |K|``.

With these choices the gradient, curl and divergence matrices are signed
incidence matrices with entries in {-1, 0, 1}.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.sparse as sps

from cqinterp.errors import DomainError, ParameterError
from cqinterp.mesh import LOCAL_EDGES, SimplicialMesh
from cqinterp.quadrature import line_rule, tet_rule, triangle_rule

KINDS = ("P1", "N0", "RT0", "P0")
TAG_TO_KIND = {"g": "P1", "c": "N0", "d": "RT0", "b": "P0"}
KIND_TO_TAG = {v: k for k, v in TAG_TO_KIND.items()}
N_SHAPE = {"P1": 4, "N0": 6, "RT0": 4, "P0": 1}
RANK = {"P1": 0, "N0": 1, "RT0": 1, "P0": 0}
# Gauss points per direction for dof integrals of non-polynomial fields
DEFAULT_DOF_POINTS = 8


def canonical_kind(kind: str) -> str:
    k = TAG_TO_KIND.get(kind, kind)
    if k not in KINDS:
        raise ParameterError(f"unknown element kind {kind!r}")
    return k


class FESpace:
    """Global lowest-order space; ``with_bc`` drops the boundary dofs."""

    def __init__(self, mesh: SimplicialMesh, kind: str, with_bc: bool = False):
        self.mesh = mesh
        self.kind = canonical_kind(kind)
        self.tag = KIND_TO_TAG[self.kind]
        self.with_bc = bool(with_bc)
        self.rank = RANK[self.kind]
        self.n_shape = N_SHAPE[self.kind]
        m = mesh
        if self.kind == "P1":
            self.n_entities = m.n_vertices
            boundary = m.is_boundary_vertex
            self.cell_entities = m.cells_sorted
            self.cell_signs = np.ones((m.n_cells, 4), dtype=np.int64)
        elif self.kind == "N0":
            self.n_entities = m.n_edges
            boundary = m.is_boundary_edge
            self.cell_entities = m.cell_edges
            self.cell_signs = np.ones((m.n_cells, 6), dtype=np.int64)
        elif self.kind == "RT0":
            self.n_entities = m.n_faces
            boundary = m.is_boundary_face
            self.cell_entities = m.cell_faces
            self.cell_signs = m.cell_face_signs
        else:
            self.n_entities = m.n_cells
            boundary = np.zeros(m.n_cells, dtype=bool)
            self.cell_entities = np.arange(m.n_cells)[:, None]
            self.cell_signs = np.ones((m.n_cells, 1), dtype=np.int64)
        self.entity_is_boundary = boundary
        keep = ~boundary if self.with_bc else np.ones(self.n_entities, dtype=bool)
        self.free = np.flatnonzero(keep)
        self.dof_of_entity = -np.ones(self.n_entities, dtype=np.int64)
        self.dof_of_entity[self.free] = np.arange(len(self.free))
        self.cell_dofs = self.dof_of_entity[self.cell_entities]
        self._mass = None

    @property
    def dim(self) -> int:
        return len(self.free)

    def __repr__(self):
        bc = ", bc" if self.with_bc else ""
        return f"FESpace({self.kind}{bc}, dim={self.dim})"

    def same_complex(self, other: "FESpace") -> bool:
        return other.mesh is self.mesh

    # ------------------------------------------------------------- basis
    def basis_values(self, cells, lam) -> np.ndarray:
        """Signed global basis functions of ``cells`` at barycentric points.

        Returns shape ``(N, n_shape)`` (scalar) or ``(N, n_shape, 3)``.
        Barycentrics may be complex.
        """
        m = self.mesh
        cells = np.asarray(cells)
        sg = self.cell_signs[cells]
        if self.kind == "P1":
            return lam * sg
        if self.kind == "P0":
            return np.ones((len(cells), 1), dtype=lam.dtype) / m.volumes[cells][:, None]
        G = m.bary_grad[cells]
        if self.kind == "N0":
            i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
            return lam[:, i, None] * G[:, j, :] - lam[:, j, None] * G[:, i, :]
        xv = m.vertices[m.cells_sorted[cells]]  # (N, 4, 3)
        x = np.einsum("nk,nkd->nd", lam, xv)
        vals = (x[:, None, :] - xv) / (3.0 * m.volumes[cells])[:, None, None]
        return vals * sg[:, :, None]

    def basis_derivatives(self, cells) -> np.ndarray:
        """Cellwise-constant derivative of the signed basis: grad, curl or div."""
        m = self.mesh
        G = m.bary_grad[cells]
        if self.kind == "P1":
            return G
        if self.kind == "N0":
            i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
            return 2.0 * np.cross(G[:, i, :], G[:, j, :])
        if self.kind == "RT0":
            return self.cell_signs[cells] / m.volumes[cells][:, None]
        return np.zeros((len(cells), 1))

    # -------------------------------------------------------------- mass
    def mass_matrix(self) -> sps.csr_matrix:
        """L2 Gram matrix of the global basis (free dofs only)."""
        if self._mass is None:
            m = self.mesh
            bary, w = tet_rule(2)
            T = m.n_cells
            loc = 0.0
            for lam, wq in zip(bary, w):
                phi = self.basis_values(np.arange(T), np.broadcast_to(lam, (T, 4)))
                if phi.ndim == 2:
                    loc = loc + wq * phi[:, :, None] * phi[:, None, :]
                else:
                    loc = loc + wq * np.einsum("tid,tjd->tij", phi, phi)
            loc = loc * m.volumes[:, None, None]
            self._mass = _assemble(self.cell_dofs, self.cell_dofs, loc, self.dim, self.dim)
        return self._mass

    def l2_norm(self, coeffs) -> float:
        c = np.asarray(coeffs)
        return float(np.sqrt(max(c @ (self.mass_matrix() @ c), 0.0)))


def _assemble(rows, cols, loc, nr, nc) -> sps.csr_matrix:
    R = np.broadcast_to(rows[:, :, None], loc.shape)
    C = np.broadcast_to(cols[:, None, :], loc.shape)
    ok = (R >= 0) & (C >= 0)
    return sps.csr_matrix((loc[ok], (R[ok], C[ok])), shape=(nr, nc))


class FEFunction:
    """A coefficient vector on an :class:`FESpace`; callable like a field."""

    def __init__(self, space: FESpace, coeffs):
        coeffs = np.asarray(coeffs)
        if coeffs.shape != (space.dim,):
            raise ParameterError(f"expected {space.dim} coefficients, got {coeffs.shape}")
        self.space = space
        self.coeffs = coeffs
        self.rank = space.rank
        self._entity_coeffs = np.zeros(space.n_entities, dtype=coeffs.dtype)
        self._entity_coeffs[space.free] = coeffs

    def __repr__(self):
        return f"FEFunction({self.space!r})"

    def cell_coeffs(self, cells) -> np.ndarray:
        return self._entity_coeffs[self.space.cell_entities[cells]]

    def eval_cells(self, cells, lam) -> np.ndarray:
        """Values at barycentric points of known cells (no point location)."""
        phi = self.space.basis_values(cells, lam)
        c = self.cell_coeffs(cells)
        if phi.ndim == 2:
            return np.sum(phi * c, axis=1)
        return np.einsum("nid,ni->nd", phi, c)

    def __call__(self, x, side: Optional[int] = None):
        return fe_eval(self, x, side)

    def derivative(self) -> "FEFunction":
        """Exact derivative in the next space of the complex (same BC flag)."""
        nxt = {"P1": "N0", "N0": "RT0", "RT0": "P0"}.get(self.space.kind)
        if nxt is None:
            raise ParameterError("P0 has no derivative in the complex")
        dst = FESpace(self.space.mesh, nxt, self.space.with_bc)
        D = discrete_diff_matrix(self.space.tag, self.space, dst)
        return FEFunction(dst, D @ self.coeffs)

    def l2_norm(self) -> float:
        return self.space.l2_norm(self.coeffs)


def fe_eval(u: FEFunction, x, side: Optional[int] = None):
    """Evaluate ``u`` at points ``x``; ``side`` forces the polynomial of one cell."""
    x = np.asarray(x)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    m = u.space.mesh
    if side is not None:
        cells = np.full(len(pts), int(side))
    else:
        cells, _ = m.locate(np.real(pts))
        miss = cells < 0
        if miss.any():
            cells[miss] = _locate_loose(m, np.real(pts[miss]))
            if np.any(cells < 0):
                raise DomainError("FE function evaluated outside the mesh")
    lam = m.barycentric(cells, pts)
    out = u.eval_cells(cells, lam)
    return out[0] if single else out


def _locate_loose(m: SimplicialMesh, pts, tol=1e-9):
    """Fallback for points on the boundary within the domain tolerance."""
    out = -np.ones(len(pts), dtype=np.int64)
    for n, p in enumerate(pts):
        cand = np.flatnonzero(np.all((m.vertices[m.cells].min(axis=1) - tol <= p) &
                                     (p <= m.vertices[m.cells].max(axis=1) + tol), axis=1))
        if len(cand):
            lam = m.barycentric(cand, np.broadcast_to(p, (len(cand), 3)))
            ok = np.flatnonzero(lam.min(axis=1) >= -tol)
            if len(ok):
                out[n] = cand[ok[0]]
    return out


# ------------------------------------------------------------ dof functionals
def apply_dofs(kind: str, simplices, field, npts: int = DEFAULT_DOF_POINTS, normals=None):
    """Apply the dof functional of ``kind`` to ``field`` on a batch of simplices.

    ``simplices`` has shape ``(N, k+1, 3)`` with ``k`` the entity dimension;
    line integrals run from vertex 0 to vertex 1, face fluxes use ``normals``
    (unit, shape ``(N, 3)``).
    """
    kind = canonical_kind(kind)
    s = np.asarray(simplices)
    if kind == "P1":
        return np.asarray(field(s[:, 0]))
    if kind == "N0":
        bary, w = line_rule(npts)
        pts = np.einsum("qk,nkd->nqd", bary, s)
        vals = field(pts.reshape(-1, 3)).reshape(len(s), len(w), 3)
        return np.einsum("q,nqd,nd->n", w, vals, s[:, 1] - s[:, 0])
    if kind == "RT0":
        bary, w = triangle_rule(npts)
        pts = np.einsum("qk,nkd->nqd", bary, s)
        vals = field(pts.reshape(-1, 3)).reshape(len(s), len(w), 3)
        area = 0.5 * np.linalg.norm(np.cross(s[:, 1] - s[:, 0], s[:, 2] - s[:, 0]), axis=1)
        return area * np.einsum("q,nqd,nd->n", w, vals, normals)
    bary, w = tet_rule(npts)
    pts = np.einsum("qk,nkd->nqd", bary, s)
    vals = field(pts.reshape(-1, 3)).reshape(len(s), len(w))
    vol = np.abs(np.linalg.det(np.stack([s[:, i] - s[:, 0] for i in (1, 2, 3)], axis=2))) / 6.0
    return vol * (vals @ w)


def entity_simplices(space: FESpace, entities=None):
    """Vertex coordinates of the dof entities, plus face normals for RT0."""
    m = space.mesh
    ent = space.free if entities is None else np.asarray(entities)
    x = m.vertices
    if space.kind == "P1":
        return x[ent][:, None, :], None
    if space.kind == "N0":
        return x[m.edges[ent]], None
    if space.kind == "RT0":
        return x[m.faces[ent]], m.face_normals[ent]
    return x[m.cells_sorted[ent]], None


def interpolate_canonical(space: FESpace, field, npts: int = DEFAULT_DOF_POINTS) -> FEFunction:
    """Canonical interpolant; boundary dofs of BC spaces are discarded."""
    if isinstance(field, FEFunction) and field.space.mesh is space.mesh and field.space.kind == space.kind:
        return FEFunction(space, field._entity_coeffs[space.free].copy())
    simp, normals = entity_simplices(space)
    chunks = []
    step = max(1, 200_000 // max(1, npts**3))
    for s in range(0, len(simp), step):
        chunks.append(apply_dofs(space.kind, simp[s : s + step], field, npts,
                                 None if normals is None else normals[s : s + step]))
    vals = np.concatenate(chunks) if chunks else np.zeros(0)
    return FEFunction(space, vals)


def dof_apply(space: FESpace, cell: int, i: int, field, npts: int = 3) -> float:
    """Global dof attached to local index ``i`` (sorted local order) of ``cell``."""
    ent = space.cell_entities[cell, i]
    simp, normals = entity_simplices(space, [ent])
    return float(np.real(apply_dofs(space.kind, simp, field, npts, normals))[0])


# ------------------------------------------------------- differential matrices
def discrete_diff_matrix(kind: str, src: FESpace, dst: FESpace) -> sps.csr_matrix:
    """Exact signed incidence matrix of grad (P1->N0), curl (N0->RT0) or div (RT0->P0)."""
    if src.mesh is not dst.mesh:
        raise ParameterError("spaces live on different meshes")
    kind = {"g": "grad", "c": "curl", "d": "div"}.get(kind, kind)
    expect = {"grad": ("P1", "N0"), "curl": ("N0", "RT0"), "div": ("RT0", "P0")}
    if kind not in expect or (src.kind, dst.kind) != expect[kind]:
        raise ParameterError(f"{kind} does not map {src.kind} to {dst.kind}")
    if dst.kind != "P0" and src.with_bc != dst.with_bc:
        raise ParameterError("boundary-condition flags differ")
    m = src.mesh
    if kind == "grad":
        rows = np.repeat(np.arange(m.n_edges), 2)
        cols = m.edges.ravel()
        vals = np.tile([-1, 1], m.n_edges)
        shape = (m.n_edges, m.n_vertices)
    elif kind == "curl":
        rows = np.repeat(np.arange(m.n_faces), 3)
        cols = m.face_edges.ravel()
        vals = m.face_edge_signs.ravel()
        shape = (m.n_faces, m.n_edges)
    else:
        rows = np.repeat(np.arange(m.n_cells), 4)
        cols = m.cell_faces.ravel()
        vals = m.cell_face_signs.ravel()
        shape = (m.n_cells, m.n_faces)
    full = sps.csr_matrix((vals.astype(np.int64), (rows, cols)), shape=shape)
    return full[dst.free][:, src.free].tocsr()


# ---------------------------------------------------------------- reference
class ReferenceElement:
    """Element on the unit tetrahedron, realised as a one-cell mesh."""

    VERTICES = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])

    def __init__(self, kind: str):
        self.kind = canonical_kind(kind)
        self.n_sh = N_SHAPE[self.kind]
        self.mesh = SimplicialMesh.from_arrays(self.VERTICES, [[0, 1, 2, 3]])
        self.space = FESpace(self.mesh, self.kind)

    def shape_functions(self, xhat) -> np.ndarray:
        xhat = np.atleast_2d(xhat)
        lam = self.mesh.barycentric(np.zeros(len(xhat), dtype=int), xhat)
        return self.space.basis_values(np.zeros(len(xhat), dtype=int), lam)

    def unisolvence_defect(self, npts: int = DEFAULT_DOF_POINTS) -> float:
        """``max |sigma_i(theta_j) - delta_ij|``."""
        ents = self.space.cell_entities[0]
        out = np.zeros((self.n_sh, self.n_sh))
        for j in range(self.n_sh):
            c = np.zeros(self.n_sh)
            c[ents[j]] = 1.0
            u = FEFunction(self.space, c)
            out[:, j] = interpolate_canonical(self.space, u.__call__, npts).coeffs[ents]
        return float(np.abs(out - np.eye(self.n_sh)).max())
