"""Experiment drivers: error norms, convergence studies and discrete Poincare constants."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Dict, List, Optional, Sequence

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from cqinterp.errors import ConfigurationError, ParameterError, StructuralError, UsageError
from cqinterp.fespace import FEFunction, FESpace, discrete_diff_matrix
from cqinterp.geometry import DeltaField, ExpandMap, ShrinkMap, StarDomain, unit_cube
from cqinterp.kernel import build_ball_quadrature
from cqinterp.mesh import SimplicialMesh, generate_cube_mesh
from cqinterp.mollify import MollifierVariant, mollify, mollify_zero
from cqinterp.quadrature import MeshQuadrature

ERROR_POINTS = 3  # tet rule exact to degree 5
RATE_BALL_ORDER = 8
RATE_MESH = 4
DENSE_EIG_LIMIT = 900
EIG_RESIDUAL = 1e-8


# ------------------------------------------------------------------ norms
def _values(f, quad: MeshQuadrature, mesh):
    if isinstance(f, FEFunction) and f.space.mesh is mesh and quad.cells is not None:
        return f.eval_cells(quad.cells, quad.lam)
    return f(quad.points)


def lp_error(f, g, p, mesh: SimplicialMesh, npts: int = ERROR_POINTS,
             quad: Optional[MeshQuadrature] = None) -> float:
    """Cellwise Gauss approximation of ``||f - g||_{L^p}``; ``g=None`` gives ``||f||``."""
    quad = MeshQuadrature(mesh, npts) if quad is None else quad
    d = np.asarray(_values(f, quad, mesh))
    if g is not None:
        d = d - np.asarray(_values(g, quad, mesh))
    a = np.abs(d) if d.ndim == 1 else np.linalg.norm(d, axis=1)
    if p == np.inf or p == "inf":
        return float(a.max())
    p = float(p)
    if p < 1:
        raise ParameterError("p must be >= 1")
    return float(np.sum(quad.weights * a**p) ** (1.0 / p))


# ------------------------------------------------------------ convergence
@dataclass
class ConvergenceTable:
    """Errors against a refinement parameter; orders are ``log2`` of successive ratios."""

    param_label: str
    norm: str
    field: str
    rows: List[tuple] = dc_field(default_factory=list)

    def add(self, param: float, error: float):
        if error < 0:
            raise ParameterError("errors are nonnegative")
        self.rows.append((float(param), float(error)))

    @property
    def orders(self) -> List[float]:
        out = []
        for (p0, e0), (p1, e1) in zip(self.rows, self.rows[1:]):
            out.append(math.log(e0 / e1) / math.log(p0 / p1) if e1 > 0 and e0 > 0 else float("nan"))
        return out

    @property
    def min_order(self) -> float:
        o = self.orders
        return min(o) if o else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["field", "norm", self.param_label, "error", "order"])
        orders = [None] + self.orders
        for (p, e), o in zip(self.rows, orders):
            w.writerow([self.field, self.norm, fmt(p), fmt(e), "" if o is None else fmt(o)])
        return buf.getvalue()


def fmt(x) -> str:
    return f"{x:.12g}"


def mollification_error(tag: str, field, delta: float, domain: StarDomain, zero_extension=False,
                        mesh: Optional[SimplicialMesh] = None, ball_order: int = RATE_BALL_ORDER,
                        npts: int = ERROR_POINTS) -> float:
    """``||K_delta f - f||_{L^2(D)}`` by mesh quadrature on the cube mesh."""
    mesh = generate_cube_mesh(RATE_MESH) if mesh is None else mesh
    quad = MeshQuadrature(mesh, npts)
    bq = build_ball_quadrature(ball_order)
    v = MollifierVariant(tag, zero_extension)
    if zero_extension:
        vals = mollify_zero(v, field, quad.points, delta, bq, ExpandMap.default(domain))
    else:
        vals = mollify(v, field, quad.points, delta, bq, ShrinkMap.default(domain))
    d = np.real(vals) - np.real(field(quad.points))
    a = np.abs(d) if d.ndim == 1 else np.linalg.norm(d, axis=1)
    return float(np.sqrt(np.sum(quad.weights * a**2)))


def mollify_rate(tag: str, field, deltas: Sequence[float], domain: Optional[StarDomain] = None,
                 zero_extension: bool = False, **kw) -> ConvergenceTable:
    domain = unit_cube() if domain is None else domain
    t = ConvergenceTable("delta", "L2", getattr(field, "name", "") or repr(field))
    for d in deltas:
        t.add(d, mollification_error(tag, field, d, domain, zero_extension, **kw))
    return t


def quasi_interp_rate(kind: str, field, ns: Sequence[int], epsilon: float, with_bc: bool = False,
                      domain: Optional[StarDomain] = None, stability: Optional[List] = None) -> ConvergenceTable:
    """``||f - J_h f||_{L^2}`` on cube meshes ``ns``; ``stability`` receives ``||J_h f|| / ||f||``."""
    from cqinterp.quasiinterp import assemble_smoothed_interp_matrix, quasi_interpolate

    domain = unit_cube() if domain is None else domain
    t = ConvergenceTable("h", "L2", getattr(field, "name", "") or repr(field))
    for n in ns:
        mesh = generate_cube_mesh(n)
        M = assemble_smoothed_interp_matrix(FESpace(mesh, kind, with_bc), epsilon, domain)
        u = quasi_interpolate(M, field)
        quad = MeshQuadrature(mesh, ERROR_POINTS)
        t.add(1.0 / n, lp_error(field, u, 2, mesh, quad=quad))
        if stability is not None:
            stability.append(lp_error(u, None, 2, mesh, quad=quad) / lp_error(field, None, 2, mesh, quad=quad))
    return t


def convergence_study(target: str, config: Dict) -> ConvergenceTable:
    """Dispatch ``mollify_rate`` or ``quasi_interp_rate`` with keyword ``config``."""
    cfg = dict(config)
    if target == "mollify_rate":
        return mollify_rate(cfg.pop("tag"), cfg.pop("field"), cfg.pop("deltas"), **cfg)
    if target == "quasi_interp_rate":
        return quasi_interp_rate(cfg.pop("kind"), cfg.pop("field"), cfg.pop("ns"), cfg.pop("epsilon"), **cfg)
    raise UsageError(f"unknown study {target!r}")


# ---------------------------------------------------------- dense kernels
def dense_lu_solve(A, b) -> np.ndarray:
    """Partial-pivoting LU solve; raises on numerically singular ``A``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ParameterError("A must be square")
    with warnings.catch_warnings():
        # singularity is reported below as a ParameterError
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.size and d.min() <= np.finfo(float).eps * max(d.max(), 1.0) * A.shape[0]:
        raise ParameterError("matrix is singular to working precision")
    return sla.lu_solve((lu, piv), b)


@numba.njit(cache=True)
def jacobi_eigh(A, tol=1e-15, max_sweeps=60):
    """Cyclic Jacobi rotations for a symmetric matrix; returns (values, vectors)."""
    n = A.shape[0]
    a = A.copy()
    v = np.eye(n)
    scale = 0.0
    for i in range(n):
        for j in range(n):
            scale += a[i, j] * a[i, j]
    scale = np.sqrt(scale)
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += a[i, j] * a[i, j]
        if np.sqrt(2.0 * off) <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    order = np.argsort(w)
    return w[order], v[:, order]


def sym_gen_eig_smallest(A, B, Q=None):
    """Smallest eigenpair of ``Q^T A Q x = lam Q^T B Q x``; returns ``(lam, Q x, residual)``.

    The residual is ``||A y - lam B y|| / ||y||`` measured within ``range(Q)``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if Q is not None:
        Q = np.asarray(Q, dtype=float)
        A = Q.T @ A @ Q
        B = Q.T @ B @ Q
    if A.shape[0] == 0:
        raise ParameterError("empty subspace")
    L = np.linalg.cholesky(0.5 * (B + B.T))
    Li = sla.solve_triangular(L, np.eye(len(L)), lower=True)
    S = Li @ A @ Li.T
    w, V = jacobi_eigh(0.5 * (S + S.T))
    x = Li.T @ V[:, 0]
    lam = float(w[0])
    res = float(np.linalg.norm(A @ x - lam * (B @ x)) / np.linalg.norm(x))
    y = x if Q is None else Q @ x
    return lam, y, res


# -------------------------------------------------------------- Poincare
@dataclass
class PoincareRow:
    h: float
    dim: int
    ratio: float
    residual: float
    method: str


@dataclass
class PoincareReport:
    with_bc: bool
    rows: List[PoincareRow] = dc_field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "h", "dim", "ratio", "residual", "method"])
        for r in self.rows:
            w.writerow(["xn" if self.with_bc else "dotn", fmt(r.h), r.dim, fmt(r.ratio), fmt(r.residual), r.method])
        return buf.getvalue()


def poincare_matrices(mesh: SimplicialMesh, with_bc: bool):
    """``(A, B, G)``: curl-curl stiffness and mass on N0, and the gradient matrix."""
    p1 = FESpace(mesh, "P1", with_bc)
    n0 = FESpace(mesh, "N0", with_bc)
    rt = FESpace(mesh, "RT0", with_bc)
    G = discrete_diff_matrix("g", p1, n0).astype(float)
    C = discrete_diff_matrix("c", n0, rt).astype(float)
    B = n0.mass_matrix()
    A = (C.T @ rt.mass_matrix() @ C).tocsr()
    if not with_bc:
        G = G[:, 1:]  # constants span the kernel of grad
    return A, B, G.tocsr()


def complement_basis(B, G) -> np.ndarray:
    """Orthonormal basis of the B-orthogonal complement of ``range(G)``."""
    BG = B @ G
    BG = BG.toarray() if sps.issparse(BG) else np.asarray(BG)
    if BG.shape[1] == 0:
        return np.eye(BG.shape[0])
    q, r = np.linalg.qr(BG, mode="complete")
    rank = int(np.sum(np.abs(np.diag(r)) > 1e-12 * max(1.0, np.abs(r).max())))
    return q[:, rank:]


def poincare_constant(mesh: SimplicialMesh, with_bc: bool = True, method: str = "auto") -> PoincareRow:
    """Smallest ``||curl v|| / ||v||`` over N0 fields B-orthogonal to discrete gradients."""
    A, B, G = poincare_matrices(mesh, with_bc)
    dim = A.shape[0] - G.shape[1]
    if dim <= 0:
        raise StructuralError("constrained space is empty on this mesh")
    if method == "auto":
        method = "dense" if A.shape[0] <= DENSE_EIG_LIMIT else "sparse"
    if method == "dense":
        Q = complement_basis(B, G)
        lam, _, res = sym_gen_eig_smallest(A.toarray(), B.toarray(), Q)
    elif method == "sparse":
        lam, res = _sparse_smallest(A, B, G)
    else:
        raise UsageError(f"unknown method {method!r}")
    if res > EIG_RESIDUAL * max(1.0, lam):
        raise ConfigurationError(f"eigen residual {res:.3e} above tolerance")
    return PoincareRow(mesh.meshsize.max_value, dim, float(np.sqrt(lam)), res, method)


def _sparse_smallest(A, B, G, k: int = 3):
    """Shift-invert Lanczos with the gradient constraint enforced by a saddle-point solve."""
    n, m = G.shape
    BG = (B @ G).tocsc()
    K = sps.bmat([[A, BG], [BG.T, None]], format="csc")
    lu = spla.splu(K)

    def op(v):
        # ARPACK passes B v already
        rhs = np.concatenate([v, np.zeros(m)])
        return lu.solve(rhs)[:n]

    OP = spla.LinearOperator((n, n), matvec=op, dtype=float)
    vals, vecs = spla.eigsh(A, k=k, M=B, sigma=0.0, OPinv=OP, which="LM", tol=1e-12)
    i = int(np.argmin(vals))
    lam = float(vals[i])
    x = vecs[:, i]
    res = float(np.linalg.norm(A @ x - lam * (B @ x)) / np.linalg.norm(x))
    return lam, res


def poincare_study(ns: Sequence[int], with_bc: bool = True, method: str = "auto") -> PoincareReport:
    rep = PoincareReport(with_bc)
    for n in ns:
        try:
            rep.rows.append(poincare_constant(generate_cube_mesh(n), with_bc, method))
        except StructuralError:
            continue
    return rep
