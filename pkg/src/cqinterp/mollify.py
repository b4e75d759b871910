"""Pullback and Piola mollifiers built on the radial shrinking/expansion maps.

For a ball node ``y_q`` with kernel weight ``W_q`` the sampling map is

    T_q(x) = x -/+ delta(x) kappa (x - x_c) + delta(x) s y_q,

with ``s = r`` (shrinking, sign -) or ``s = zeta`` (expansion, sign +).  The
four operators are

    g:  sum_q W_q f(T_q x)
    c:  sum_q W_q DT_q(x)^T g(T_q x)
    d:  sum_q W_q adj(DT_q(x)) g(T_q x)        (adj = det * inverse)
    b:  sum_q W_q det(DT_q(x)) f(T_q x)

so that ``grad K^g = K^c grad``, ``curl K^c = K^d curl``, ``div K^d = K^b div``
hold for the discrete ball rule.  For constant ``delta`` the Jacobian is the
scalar ``(1 -/+ delta kappa) I``.  The expansion family extends the field by
zero outside the domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cqinterp.errors import DomainError, InclusionError, ParameterError, UsageError
from cqinterp.geometry import DeltaField, ExpandMap, ShrinkMap, _as_delta, domain_contains
from cqinterp.kernel import BallQuadrature

TAGS = ("g", "c", "d", "b")
# upper bound on (points x ball nodes) evaluated at once
_CHUNK = 400_000


@dataclass(frozen=True)
class MollifierVariant:
    tag: str
    zero_extension: bool = False

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ParameterError(f"unknown mollifier tag {self.tag!r}")


def _adjugate(A):
    """Adjugate of a batch of 3x3 matrices (complex safe)."""
    out = np.empty_like(A)
    for i in range(3):
        for j in range(3):
            r = [k for k in range(3) if k != j]
            c = [k for k in range(3) if k != i]
            minor = A[..., r[0], c[0]] * A[..., r[1], c[1]] - A[..., r[0], c[1]] * A[..., r[1], c[0]]
            out[..., i, j] = (-1) ** (i + j) * minor
    return out


def _det(A):
    return (
        A[..., 0, 0] * (A[..., 1, 1] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 1])
        - A[..., 0, 1] * (A[..., 1, 0] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 0])
        + A[..., 0, 2] * (A[..., 1, 0] * A[..., 2, 1] - A[..., 1, 1] * A[..., 2, 0])
    )


def _apply_tag(tag, vals, DT):
    """``A(DT) vals`` for node-resolved Jacobians ``DT`` of shape (..., 3, 3)."""
    if tag == "g":
        return vals
    if tag == "c":
        return np.einsum("...ji,...j->...i", DT, vals)
    if tag == "d":
        return np.einsum("...ij,...j->...i", _adjugate(DT), vals)
    return _det(DT) * vals


def _mollify(variant, field, x, delta, quad, domain, spread, sign, check_inside):
    delta = _as_delta(delta)
    x = np.asarray(x)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if not np.all(domain_contains(domain, x)):
        raise DomainError("mollifier evaluated outside the domain")
    rank = getattr(field, "rank", 1)
    nodes = quad.nodes
    W = quad.kernel_weights
    nq = len(W)
    out = []
    step = max(1, _CHUNK // nq)
    for s in range(0, len(x), step):
        xs = x[s : s + step]
        out.append(_mollify_chunk(variant, field, xs, delta, nodes, W, domain, spread, sign, check_inside, rank))
    res = np.concatenate(out, axis=0)
    return res[0] if single else res


def _mollify_chunk(variant, field, x, delta, nodes, W, domain, spread, sign, check_inside, rank):
    kappa = domain.kappa
    d = delta.value(x)
    grad = delta.gradient(x)
    rel = x - domain.star_center
    base = x + sign * kappa * d[:, None] * rel
    P = base[:, None, :] + (d * spread)[:, None, None] * nodes[None, :, :]
    flat = P.reshape(-1, 3)
    inside = domain_contains(domain, flat)
    if check_inside and not inside.all():
        k = int(np.flatnonzero(~inside)[0])
        raise InclusionError(
            f"sample point {np.real(flat[k])} left the domain (point {np.real(x[k // len(W)])}); "
            "the shrinking radius is too large"
        )
    if inside.all():
        vals = field(flat)
    else:
        vals_in = field(flat[inside]) if inside.any() else None
        if vals_in is None:
            shape, dtype = ((len(flat),) if rank == 0 else (len(flat), 3)), flat.dtype
        else:
            shape, dtype = (len(flat),) + vals_in.shape[1:], np.result_type(vals_in, flat.dtype)
        vals = np.zeros(shape, dtype=dtype)
        if vals_in is not None:
            vals[inside] = vals_in
    vals = vals.reshape(P.shape[:2] + vals.shape[1:])
    uniform = not np.any(grad)
    if uniform:
        acc = np.einsum("q,nq...->n...", W, vals)
        alpha = 1.0 + sign * kappa * d
        fac = {"g": np.ones_like(alpha), "c": alpha, "d": alpha**2, "b": alpha**3}[variant.tag]
        res = acc * (fac[:, None] if acc.ndim == 2 else fac)
    else:
        eye = np.eye(3)
        DT = (
            eye[None, None]
            + sign * kappa * (d[:, None, None, None] * eye[None, None] + (rel[:, :, None] * grad[:, None, :])[:, None])
            + spread * nodes[None, :, :, None] * grad[:, None, None, :]
        )
        terms = _apply_tag(variant.tag, vals, DT)
        res = np.einsum("q,nq...->n...", W, terms)
    zero = d == 0
    if np.any(zero):
        res = np.array(res, dtype=np.result_type(res, x.dtype))
        res[zero] = field(x[zero])
    return res


def mollify(v: MollifierVariant, field, x, delta, quad: BallQuadrature, smap: ShrinkMap):
    """Shrink-map mollifier evaluated at points ``x`` of the domain."""
    if v.zero_extension:
        raise UsageError("use mollify_zero for the zero-extension family")
    return _mollify(v, field, x, delta, quad, smap.domain, smap.radius, -1.0, True)


def mollify_zero(v: MollifierVariant, field, x, delta, quad: BallQuadrature, emap: ExpandMap):
    """Expansion-map mollifier of the zero extension of ``field``."""
    if not v.zero_extension:
        raise UsageError("use mollify for the shrink-map family")
    return _mollify(v, field, x, delta, quad, emap.domain, emap.zeta, +1.0, False)


class MollifiedField:
    """A mollified field as a callable, with derivatives given by commutation."""

    NEXT = {"g": ("grad", "c"), "c": ("curl", "d"), "d": ("div", "b")}

    def __init__(self, v: MollifierVariant, field, delta, quad, gmap):
        self.variant = v
        self.field = field
        self.delta = delta
        self.quad = quad
        self.map = gmap
        self.rank = 0 if v.tag in ("g", "b") else 1

    def __call__(self, x):
        fn = mollify_zero if self.variant.zero_extension else mollify
        return fn(self.variant, self.field, x, self.delta, self.quad, self.map)

    def _derived(self, which):
        name, tag = self.NEXT.get(self.variant.tag, (None, None))
        if name != which:
            return None
        deriv = getattr(self.field, which, None)
        if deriv is None:
            return None
        return MollifiedField(MollifierVariant(tag, self.variant.zero_extension), deriv, self.delta, self.quad, self.map)

    @property
    def grad(self):
        return self._derived("grad")

    @property
    def curl(self):
        return self._derived("curl")

    @property
    def div(self):
        return self._derived("div")


# ------------------------------------------------------------- trace pairing
def trace_pairing(kind: str, v, w, quadrature) -> float:
    """Volume form of the tangential (``curl``) or normal (``div``) trace pairing.

    curl: ``int v . curl w - int w . curl v``;
    div:  ``int v . grad q + int q div v`` with ``q = w``.
    """
    pts, wts = quadrature.points, quadrature.weights
    if kind == "curl":
        if getattr(v, "curl", None) is None or getattr(w, "curl", None) is None:
            raise UsageError("curl pairing needs curl evaluators for v and w")
        vals = np.sum(v(pts) * w.curl(pts), axis=1) - np.sum(w(pts) * v.curl(pts), axis=1)
    elif kind == "div":
        if getattr(v, "div", None) is None or getattr(w, "grad", None) is None:
            raise UsageError("div pairing needs div of v and grad of q")
        vals = np.sum(v(pts) * w.grad(pts), axis=1) + w(pts) * v.div(pts)
    else:
        raise UsageError(f"unknown pairing kind {kind!r}")
    return float(np.real(np.sum(wts * vals)))


class _NodeField:
    """``x -> fac * f(alpha x + t)`` with derivatives of the same form."""

    def __init__(self, f, alpha, t, fac, rank, dfields=None):
        self.f, self.alpha, self.t, self.fac, self.rank = f, alpha, t, fac, rank
        self._d = dfields or {}

    def __call__(self, x):
        return self.fac * self.f(self.alpha * np.asarray(x) + self.t)

    def __getattr__(self, name):
        if name in ("grad", "curl", "div"):
            return self._d.get(name)
        raise AttributeError(name)


def zero_extension_trace_pairing(kind: str, g, w, delta: float, quad: BallQuadrature,
                                 emap: ExpandMap, mesh_quadrature) -> float:
    """Trace pairing of the zero-extension mollification of ``g`` against ``w``.

    Constant ``delta`` only.  With the discrete ball rule the mollified field
    is a weighted sum of affine pullbacks, each supported on the preimage of
    the domain under one sampling map.  Each term is paired over its own
    support (the mesh rule mapped by the inverse sampling map), which keeps
    every integrand smooth.
    """
    if kind not in ("curl", "div"):
        raise UsageError(f"unknown pairing kind {kind!r}")
    d = emap.domain
    alpha = 1.0 + delta * d.kappa
    total = 0.0
    for yq, wq in zip(quad.nodes, quad.kernel_weights):
        t = -delta * d.kappa * d.star_center + delta * emap.zeta * yq
        if kind == "curl":
            dv = {"curl": _NodeField(g.curl, alpha, t, alpha**2, 1)}
            vq = _NodeField(g, alpha, t, alpha, 1, dv)
        else:
            dv = {"div": _NodeField(g.div, alpha, t, alpha**3, 0)}
            vq = _NodeField(g, alpha, t, alpha**2, 1, dv)
        total += wq * trace_pairing(kind, vq, w, mesh_quadrature.mapped(alpha, t))
    return float(total)


# --------------------------------------------------- continuous commutation
COMPLEX_STEP = 1e-30
_NEXT = {"g": ("grad", "c"), "c": ("curl", "d"), "d": ("div", "b")}


def complex_step_jacobian(F, x, h: float = COMPLEX_STEP) -> np.ndarray:
    """Jacobian of ``F`` at points ``x`` by the complex step (no subtraction error).

    Returns shape ``(N, 3)`` for scalar ``F`` and ``(N, 3, 3)`` (``[n, i, j] = dF_i/dx_j``)
    for vector ``F``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cols = []
    for j in range(3):
        xc = x.astype(complex)
        xc[:, j] += 1j * h
        cols.append(np.imag(F(xc)) / h)
    return np.stack(cols, axis=-1)


def _apply_derivative(J, which):
    if which == "grad":
        return J
    if which == "div":
        return J[:, 0, 0] + J[:, 1, 1] + J[:, 2, 2]
    return np.stack([J[:, 2, 1] - J[:, 1, 2], J[:, 0, 2] - J[:, 2, 0], J[:, 1, 0] - J[:, 0, 1]], axis=1)


def commutation_defect(tag: str, field, x, delta, quad: BallQuadrature, gmap):
    """Pointwise ``(lhs, rhs)`` for ``D K^tag f = K^next D f`` at points ``x``.

    ``lhs`` differentiates the discrete mollified field (complex step through
    the sampling maps and delta), ``rhs`` mollifies the analytic derivative.
    ``gmap`` is a ShrinkMap or an ExpandMap (zero-extension family).
    """
    if tag not in _NEXT:
        raise UsageError(f"no derivative leaves the {tag!r} space")
    which, nxt = _NEXT[tag]
    zero = isinstance(gmap, ExpandMap)
    deriv = getattr(field, which, None)
    if deriv is None:
        raise UsageError(f"field has no analytic {which}")
    fn = mollify_zero if zero else mollify
    F = lambda p: fn(MollifierVariant(tag, zero), field, p, delta, quad, gmap)
    lhs = _apply_derivative(complex_step_jacobian(F, x), which)
    rhs = np.real(fn(MollifierVariant(nxt, zero), deriv, np.atleast_2d(x), delta, quad, gmap))
    return lhs, rhs
