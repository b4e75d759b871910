"""Gauss rules on the reference segment, triangle and tetrahedron.

Points are returned in barycentric coordinates and the weights sum to one, so
``measure * sum(w * f(points))`` approximates the integral of ``f``.
Triangle and tetrahedron rules use collapsed (Duffy) coordinates with
Gauss-Jacobi factors absorbing the collapse Jacobian.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


def _jacobi01(n, alpha):
    """Gauss-Jacobi rule for ``(1-x)^alpha`` on [0, 1], weights summing to one."""
    t, w = roots_jacobi(n, alpha, 0.0)
    x = 0.5 * (t + 1.0)
    return x, w / w.sum()


@lru_cache(maxsize=None)
def line_rule(n: int):
    x, w = _jacobi01(n, 0.0)
    bary = np.stack([1.0 - x, x], axis=1)
    return bary, w


@lru_cache(maxsize=None)
def triangle_rule(n: int):
    """Exact for polynomials of degree ``2n - 1``."""
    x1, w1 = _jacobi01(n, 1.0)
    x2, w2 = _jacobi01(n, 0.0)
    a = np.repeat(x1, n)
    b = np.tile(x2, n) * (1.0 - a)
    w = np.outer(w1, w2).ravel()
    bary = np.stack([1.0 - a - b, a, b], axis=1)
    return bary, w


@lru_cache(maxsize=None)
def tet_rule(n: int):
    """Exact for polynomials of degree ``2n - 1``."""
    x1, w1 = _jacobi01(n, 2.0)
    x2, w2 = _jacobi01(n, 1.0)
    x3, w3 = _jacobi01(n, 0.0)
    a = np.repeat(x1, n * n)
    b = np.tile(np.repeat(x2, n), n) * (1.0 - a)
    c = np.tile(x3, n * n) * (1.0 - a) * (1.0 - np.tile(np.repeat(x2, n), n))
    w = (w1[:, None, None] * w2[None, :, None] * w3[None, None, :]).ravel()
    bary = np.stack([1.0 - a - b - c, a, b, c], axis=1)
    return bary, w


def rule_for_degree(dim: int, degree: int):
    n = max(1, (degree + 2) // 2)
    return (line_rule, triangle_rule, tet_rule)[dim - 1](n)


class MeshQuadrature:
    """Cellwise Gauss rule on a tetrahedral mesh: points, weights, cells, barycentrics."""

    def __init__(self, mesh, npts: int = 3, points=None, weights=None):
        if points is not None:
            self.points = np.asarray(points)
            self.weights = np.asarray(weights)
            self.cells = None
            self.lam = None
            return
        bary, w = tet_rule(npts)
        T = mesh.n_cells
        xv = mesh.vertices[mesh.cells_sorted]
        self.points = np.einsum("qk,tkd->tqd", bary, xv).reshape(-1, 3)
        self.weights = (mesh.volumes[:, None] * w[None, :]).ravel()
        self.cells = np.repeat(np.arange(T), len(w))
        self.lam = np.tile(bary, (T, 1))

    def __len__(self):
        return len(self.weights)

    def mapped(self, scale: float, shift) -> "MeshQuadrature":
        """Rule for the image set ``{(z - shift) / scale : z in mesh}``."""
        pts = (self.points - np.asarray(shift)) / scale
        return MeshQuadrature(None, points=pts, weights=self.weights / scale**3)
