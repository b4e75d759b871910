"""Analytic field evaluators with exact derivatives.

Fields are built from sympy expressions in ``x, y, z`` and lambdified to
numpy, so they accept complex input (used for complex-step checks).
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp

from cqinterp.errors import ParameterError

X, Y, Z = sp.symbols("x y z", real=True)
COORDS = (X, Y, Z)


def _lambdify(expr):
    f = sp.lambdify(COORDS, expr, modules="numpy")

    def call(p):
        p = np.asarray(p)
        out = f(p[..., 0], p[..., 1], p[..., 2])
        return np.array(np.broadcast_to(out, p.shape[:-1]), dtype=np.result_type(out, p.dtype, float))

    return call


class FieldEvaluator:
    """Callable ``x -> value`` (scalar or 3-vector) with optional derivatives.

    ``grad`` (scalars), ``curl`` and ``div`` (vectors) are evaluators or
    ``None``.  For fields built from expressions they are created on first
    access.
    """

    def __init__(self, func: Callable, rank: int, name: str = "",
                 grad=None, curl=None, div=None):
        if rank not in (0, 1):
            raise ParameterError("rank must be 0 (scalar) or 1 (vector)")
        self.func = func
        self.rank = rank
        self.name = name
        self._grad = grad
        self._curl = curl
        self._div = div
        self._exprs = None

    def __call__(self, x):
        return self.func(np.asarray(x))

    def __repr__(self):
        return f"FieldEvaluator({self.name or '?'}, rank={self.rank})"

    @classmethod
    def scalar(cls, expr, name=None):
        expr = sp.sympify(expr, locals=dict(x=X, y=Y, z=Z))
        out = cls(_lambdify(expr), 0, name or str(expr))
        out._exprs = (expr,)
        return out

    @classmethod
    def vector(cls, exprs: Sequence, name=None):
        exprs = tuple(sp.sympify(e, locals=dict(x=X, y=Y, z=Z)) for e in exprs)
        if len(exprs) != 3:
            raise ParameterError("vector field needs three components")
        comps = [_lambdify(e) for e in exprs]

        def func(p):
            p = np.asarray(p)
            return np.stack([c(p) for c in comps], axis=-1)

        out = cls(func, 1, name or str(exprs))
        out._exprs = exprs
        return out

    @property
    def grad(self):
        if self._grad is None and self._exprs is not None and self.rank == 0:
            e = self._exprs[0]
            self._grad = FieldEvaluator.vector([sp.diff(e, c) for c in COORDS], name=f"grad({self.name})")
        return self._grad

    @property
    def curl(self):
        if self._curl is None and self._exprs is not None and self.rank == 1:
            e = self._exprs
            self._curl = FieldEvaluator.vector(
                [sp.diff(e[2], Y) - sp.diff(e[1], Z),
                 sp.diff(e[0], Z) - sp.diff(e[2], X),
                 sp.diff(e[1], X) - sp.diff(e[0], Y)],
                name=f"curl({self.name})",
            )
        return self._curl

    @property
    def div(self):
        if self._div is None and self._exprs is not None and self.rank == 1:
            e = self._exprs
            self._div = FieldEvaluator.scalar(sum(sp.diff(a, c) for a, c in zip(e, COORDS)),
                                              name=f"div({self.name})")
        return self._div

    def derivative(self, tag: str) -> "FieldEvaluator":
        """The analytic derivative matching a mollifier tag: g->grad, c->curl, d->div."""
        d = {"g": self.grad, "c": self.curl, "d": self.div}.get(tag)
        if d is None:
            raise ParameterError(f"field {self.name!r} has no derivative for tag {tag!r}")
        return d


def constant_field(value) -> FieldEvaluator:
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return FieldEvaluator.scalar(sp.Float(float(value)))
    return FieldEvaluator.vector([sp.Float(float(v)) for v in value])


# ----------------------------------------------------------------- batteries
SCALAR_BATTERY = [
    "sin(pi*x)*sin(pi*y)*sin(pi*z)",
    "cos(x + 2*y - z) + x**2*y",
    "exp(0.3*x)*cos(1.3*y)*sin(0.7*z + 0.2)",
]

VECTOR_BATTERY = [
    ("sin(pi*y)*cos(z)", "x*z + cos(2*x)", "exp(0.5*y)*sin(x + z)"),
    ("y*z", "sin(x - y)", "cos(pi*x*z)"),
    ("cos(y + z)", "sin(2*z)*x", "exp(-x)*y"),
]

# scalar fields vanishing on the unit-cube boundary
SCALAR_BC_BATTERY = [
    "sin(pi*x)*sin(pi*y)*sin(pi*z)",
    "sin(pi*x)*sin(2*pi*y)*sin(pi*z)*(1 + x*y)",
    "sin(pi*x)*sin(pi*y)*sin(pi*z)*cos(x - z)",
]

_S = ("sin(pi*x)", "sin(pi*y)", "sin(pi*z)")


def _tangential_bc(h):
    """``g_i = h_i * prod_{j != i} sin(pi x_j)``: tangential trace zero on the cube."""
    return tuple(f"({h[i]})*{_S[(i + 1) % 3]}*{_S[(i + 2) % 3]}" for i in range(3))


def _normal_bc(h):
    """``g_i = h_i * sin(pi x_i)``: normal trace zero on the cube."""
    return tuple(f"({h[i]})*{_S[i]}" for i in range(3))


TANGENTIAL_BC_BATTERY = [
    _tangential_bc(("cos(pi*x)", "cos(pi*y)", "cos(pi*z)")),
    _tangential_bc(("1 + y", "x*z", "cos(x - y)")),
    _tangential_bc(("exp(0.5*z)", "sin(x + y)", "1")),
]

NORMAL_BC_BATTERY = [
    _normal_bc(("cos(pi*y)*cos(pi*z)", "cos(pi*x)*cos(pi*z)", "cos(pi*x)*cos(pi*y)")),
    _normal_bc(("1 + y*z", "cos(x)", "exp(0.3*x)")),
    _normal_bc(("sin(y + z)", "1", "x - y")),
]


def scalar_battery(bc=False):
    src = SCALAR_BC_BATTERY if bc else SCALAR_BATTERY
    return [FieldEvaluator.scalar(e) for e in src]


def vector_battery(bc: Optional[str] = None):
    """``bc`` in {None, 'tangential', 'normal'}."""
    src = {None: VECTOR_BATTERY, "tangential": TANGENTIAL_BC_BATTERY, "normal": NORMAL_BC_BATTERY}[bc]
    return [FieldEvaluator.vector(e) for e in src]


# fields vanishing to second order on the cube boundary
_BUBBLE2 = "(sin(pi*x)*sin(pi*y)*sin(pi*z))**2"


def vanishing_battery(rank: int):
    """Smooth fields that vanish with their gradient on the unit-cube boundary."""
    if rank == 0:
        return [FieldEvaluator.scalar(f"{_BUBBLE2}*({e})") for e in SCALAR_BATTERY]
    return [FieldEvaluator.vector([f"{_BUBBLE2}*({c})" for c in v]) for v in VECTOR_BATTERY]
