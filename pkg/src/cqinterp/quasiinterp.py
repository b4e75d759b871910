"""Commuting quasi-interpolation ``J_h I_h K_delta`` and its calibration.

``M`` is the matrix of ``I_h K_delta`` restricted to the finite element space
(column ``j`` holds the dofs of the smoothed basis function ``j``).  Once
``||I - M|| <= 1/2`` the operator ``J_h = M^{-1}`` exists and
``M^{-1} I_h K_delta`` is a projection that commutes with grad, curl and div.
Spaces with boundary conditions use the zero-extension mollifiers.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from cqinterp.errors import (
    CalibrationError, ConfigurationError, InclusionError, ParameterError, UsageError,
)
from cqinterp.fespace import (
    DEFAULT_DOF_POINTS, FEFunction, FESpace, discrete_diff_matrix,
)
from cqinterp.geometry import DeltaField, StarDomain, unit_cube
from cqinterp.kernel import build_ball_quadrature
from cqinterp.mesh import epsilon_max
from cqinterp.smoothed import (
    ASSEMBLY_BALL_ORDER, Smoother, assemble_exact, assemble_pointwise, smoothed_dofs,
)

CALIBRATION_TARGET = 0.45
POWER_ITERATIONS = 30
MAX_HALVINGS = 20
# above this size the sparse LU fills in badly (wide stencils); use GMRES instead
LU_MAX_DIM = 12000
SOLVE_RTOL = 1e-14


@dataclass
class SmoothedInterpMatrix:
    """Matrix of ``I_h K_delta`` on a space, with its sparse LU factorisation."""

    space: FESpace
    epsilon: float
    smoother: Smoother
    matrix: sps.csr_matrix
    lu: object = dc_field(repr=False)

    @property
    def dim(self) -> int:
        return self.space.dim

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.lu is not None:
            return self.lu.solve(b)
        if not self.dim:
            return b.copy()
        # ||I - M|| <= 1/2 makes the iteration contract like a Neumann series
        x, info = spla.gmres(self.matrix, b, rtol=SOLVE_RTOL, atol=0.0, restart=60, maxiter=50)
        if info != 0:
            raise ParameterError(f"iterative solve with M did not converge (info {info})")
        return x

    def defect_mass_norm(self, iterations: int = POWER_ITERATIONS, seed: int = 0) -> float:
        """Power-iteration estimate of ``||I - M||`` in the mass-weighted 2-norm."""
        return _mass_norm_power(self.matrix, self.space.mass_matrix(), iterations, seed)

    def defect_inf_norm(self) -> float:
        """``||I - M||_inf`` on coefficient vectors."""
        E = sps.identity(self.dim, format="csr") - self.matrix
        return float(np.max(np.asarray(abs(E).sum(axis=1)).ravel())) if self.dim else 0.0

    def defect_mass_norm_exact(self) -> float:
        """Dense generalized-eigenvalue value of the mass-weighted norm (small spaces)."""
        B = self.space.mass_matrix().toarray()
        E = np.eye(self.dim) - self.matrix.toarray()
        lam = sla.eigh(E.T @ B @ E, B, eigvals_only=True)
        return float(np.sqrt(max(lam[-1], 0.0)))


def _mass_norm_power(M, B, iterations, seed):
    n = M.shape[0]
    if n == 0:
        return 0.0
    E = sps.identity(n, format="csr") - M
    Blu = spla.splu(sps.csc_matrix(B))
    v = np.random.default_rng(seed).standard_normal(n)
    lam = 0.0
    for _ in range(iterations):
        v /= np.sqrt(v @ (B @ v))
        Ev = E @ v
        w = Blu.solve(E.T @ (B @ Ev))
        lam = float(Ev @ (B @ Ev))
        v = w
    return float(np.sqrt(max(lam, 0.0)))


def make_smoother(space: FESpace, epsilon: float, domain: StarDomain,
                  ball_order: int = ASSEMBLY_BALL_ORDER,
                  zero_extension: Optional[bool] = None) -> Smoother:
    """Mollifier family with ``delta = epsilon h`` for ``space``."""
    if zero_extension is None:
        zero_extension = space.with_bc
    delta = DeltaField.mesh_scaled(epsilon, space.mesh.meshsize)
    return Smoother(domain, delta, build_ball_quadrature(ball_order), zero_extension)


def assemble_smoothed_interp_matrix(space: FESpace, epsilon: float,
                                    domain: Optional[StarDomain] = None,
                                    ball_order: int = ASSEMBLY_BALL_ORDER,
                                    zero_extension: Optional[bool] = None,
                                    check_epsilon: bool = True) -> SmoothedInterpMatrix:
    """Assemble ``M`` for ``delta = epsilon h`` and factorise it.

    Uniform meshsize fields use the exact clipping assembly, graded ones the
    pointwise quadrature route.
    """
    domain = unit_cube() if domain is None else domain
    if not np.isfinite(epsilon) or epsilon < 0:
        raise ParameterError(f"epsilon must be a nonnegative number, got {epsilon}")
    sm = make_smoother(space, epsilon, domain, ball_order, zero_extension)
    if check_epsilon and epsilon > 0:
        bound = cached_epsilon_max(space.mesh, domain, sm.spread)
        if epsilon > bound * (1 + 1e-12):
            raise ParameterError(f"epsilon = {epsilon:g} exceeds eps_max = {bound:g} for this mesh")
    try:
        if sm.uniform:
            M = assemble_exact(space, sm)
        else:
            M = assemble_pointwise(space, sm)
    except InclusionError as exc:
        raise ConfigurationError(f"smoothing reach too large: {exc}") from exc
    try:
        lu = spla.splu(sps.csc_matrix(M)) if 0 < space.dim <= LU_MAX_DIM else None
    except RuntimeError as exc:
        raise ParameterError(f"M is singular; epsilon = {epsilon:g} too large") from exc
    return SmoothedInterpMatrix(space, float(epsilon), sm, M.tocsr(), lu)


def cached_epsilon_max(mesh, domain: StarDomain, radius: float) -> float:
    cache = mesh.__dict__.setdefault("_eps_max_cache", {})
    key = (id(domain), round(radius, 15))
    if key not in cache:
        cache[key] = epsilon_max(mesh, domain, radius)["eps_max"]
    return cache[key]


def _norms(Ms: Sequence[SmoothedInterpMatrix]):
    return max(m.defect_mass_norm() for m in Ms), max(m.defect_inf_norm() for m in Ms)


def calibrate_epsilon(spaces, epsilon_start: float, domain: Optional[StarDomain] = None,
                      ball_order: int = ASSEMBLY_BALL_ORDER, target: float = CALIBRATION_TARGET,
                      history: Optional[List] = None) -> float:
    """Halve ``epsilon`` from ``epsilon_start`` until ``||I - M|| <= target``.

    ``spaces`` is one space or several sharing the delta field (a complex);
    the bound must hold on all of them.  ``history`` (a list) receives
    ``(epsilon, mass norm, inf norm)`` per trial.
    """
    if isinstance(spaces, FESpace):
        spaces = [spaces]
    domain = unit_cube() if domain is None else domain
    hist = [] if history is None else history
    eps = float(epsilon_start)
    for _ in range(MAX_HALVINGS + 1):
        try:
            Ms = [assemble_smoothed_interp_matrix(s, eps, domain, ball_order) for s in spaces]
            a, b = _norms(Ms)
        except (ParameterError, ConfigurationError):
            if eps == epsilon_start:
                raise
            a = b = np.inf
        hist.append((eps, a, b))
        if a <= target and b <= target:
            return eps
        eps *= 0.5
    raise CalibrationError(f"no epsilon found after {MAX_HALVINGS} halvings", hist)


def complex_spaces(mesh, with_bc: bool) -> Dict[str, FESpace]:
    return {k: FESpace(mesh, k, with_bc) for k in ("P1", "N0", "RT0", "P0")}


def assemble_complex(mesh, epsilon: float, with_bc: bool, domain: Optional[StarDomain] = None,
                     ball_order: int = ASSEMBLY_BALL_ORDER) -> Dict[str, SmoothedInterpMatrix]:
    """The four matrices of one complex with a shared delta field (keys by tag)."""
    return {
        s.tag: assemble_smoothed_interp_matrix(s, epsilon, domain, ball_order)
        for s in complex_spaces(mesh, with_bc).values()
    }


def quasi_interpolate(M: SmoothedInterpMatrix, f, npts: int = DEFAULT_DOF_POINTS) -> FEFunction:
    """``J_h I_h K_delta f`` as a finite element function."""
    b = smoothed_dofs(M.space, M.smoother, f, npts, matrix=M.matrix)
    return FEFunction(M.space, M.solve(b))


def _derivative(f, which):
    if isinstance(f, FEFunction):
        return f.derivative()
    d = getattr(f, which, None)
    if d is None:
        raise UsageError(f"field has no {which}")
    return d


def check_discrete_commutation(Mg: SmoothedInterpMatrix, Mc: SmoothedInterpMatrix,
                               Md: SmoothedInterpMatrix, Mb: SmoothedInterpMatrix,
                               f=None, g=None, h=None,
                               npts: int = DEFAULT_DOF_POINTS) -> Dict[str, float]:
    """Max-norm defects of the three commuting squares.

    ``grad``: ``G J^g f - J^c grad f``; ``curl`` uses the vector field ``g``,
    ``div`` uses ``h`` (defaults to ``g`` unless ``g`` is a discrete field).
    """
    Ms = (Mg, Mc, Md, Mb)
    if [m.space.tag for m in Ms] != ["g", "c", "d", "b"]:
        raise UsageError("matrices must be given in the order g, c, d, b")
    if len({m.epsilon for m in Ms}) != 1:
        raise UsageError("all four matrices must share one epsilon")
    if len({(id(m.space.mesh), m.space.with_bc, m.smoother.zero_extension) for m in Ms}) != 1:
        raise UsageError("matrices come from different meshes or boundary settings")
    if h is None and g is not None and not isinstance(g, FEFunction):
        h = g
    out = {}
    if f is not None:
        G = discrete_diff_matrix("g", Mg.space, Mc.space)
        out["grad"] = _sup(G @ quasi_interpolate(Mg, f, npts).coeffs
                           - quasi_interpolate(Mc, _derivative(f, "grad"), npts).coeffs)
    if g is not None:
        C = discrete_diff_matrix("c", Mc.space, Md.space)
        out["curl"] = _sup(C @ quasi_interpolate(Mc, g, npts).coeffs
                           - quasi_interpolate(Md, _derivative(g, "curl"), npts).coeffs)
    if h is not None:
        D = discrete_diff_matrix("d", Md.space, Mb.space)
        out["div"] = _sup(D @ quasi_interpolate(Md, h, npts).coeffs
                          - quasi_interpolate(Mb, _derivative(h, "div"), npts).coeffs)
    out["max"] = max(out.values()) if out else 0.0
    return out


def _sup(v) -> float:
    return float(np.max(np.abs(v))) if len(v) else 0.0
