import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqinterp.errors import InclusionError, ParameterError, UsageError
from cqinterp.fields import FieldEvaluator, constant_field, scalar_battery, vanishing_battery, vector_battery
from cqinterp.geometry import DeltaField, ExpandMap, ShrinkMap, shrink_map_eval, unit_cube
from cqinterp.harness import lp_error, mollification_error
from cqinterp.kernel import _bump, build_ball_quadrature
from cqinterp.mesh import generate_cube_mesh
from cqinterp.mollify import (
    MollifiedField, MollifierVariant, commutation_defect, mollify, mollify_zero, trace_pairing,
    zero_extension_trace_pairing,
)
from cqinterp.quadrature import MeshQuadrature

D = unit_cube()
K = D.kappa
TAGS = ["g", "c", "d", "b"]


@pytest.fixture(scope="module")
def smap():
    return ShrinkMap.default(D)


@pytest.fixture(scope="module")
def emap():
    return ExpandMap.default(D)


def _points(n, seed=0, lo=0.0, hi=1.0):
    return lo + (hi - lo) * np.random.default_rng(seed).random((n, 3))


def _field(tag):
    return scalar_battery()[1] if tag in ("g", "b") else vector_battery()[0]


@pytest.mark.parametrize("tag", TAGS)
@pytest.mark.parametrize("zero", [False, True])
def test_zero_delta_is_identity(tag, zero, smap, emap, ball_small):
    f = _field(tag)
    x = _points(30)
    v = MollifierVariant(tag, zero)
    out = (mollify_zero(v, f, x, 0.0, ball_small, emap) if zero else mollify(v, f, x, 0.0, ball_small, smap))
    assert np.array_equal(out, f(x))


@pytest.mark.parametrize("tag, power", [("g", 0), ("c", 1), ("d", 2), ("b", 3)])
def test_constant_fields(tag, power, smap, ball_small):
    delta = 0.2
    val = 1.7 if tag in ("g", "b") else np.array([1.0, -2.0, 0.5])
    out = mollify(MollifierVariant(tag), constant_field(val), _points(10), delta, ball_small, smap)
    assert np.allclose(out, (1 - delta * K) ** power * val, rtol=1e-14, atol=1e-14)


def test_affine_field(smap, ball_small):
    f = FieldEvaluator.scalar("2*x - y + 0.5*z + 3")
    x = _points(25, 1)
    delta = 0.15
    phi, _ = shrink_map_eval(smap, x, delta)
    out = mollify(MollifierVariant("g"), f, x, delta, ball_small, smap)
    assert np.allclose(out, phi @ [2, -1, 0.5] + 3, atol=1e-14)


def test_zero_extension_examples(emap, ball_small):
    one = constant_field(1.0)
    v = MollifierVariant("g", True)
    delta = 0.1
    deep = np.array([[0.5, 0.5, 0.5], [0.4, 0.6, 0.45]])
    assert np.allclose(mollify_zero(v, one, deep, delta, ball_small, emap), 1.0, atol=1e-14)
    band = delta * emap.zeta / (1 + delta * K)
    edge = np.array([[0.5, 0.5, 1.0], [0.3, 0.7, 1 - 0.9 * band], [0.0, 0.2, 0.4]])
    assert np.all(mollify_zero(v, one, edge, delta, ball_small, emap) == 0.0)
    mid = np.array([[0.5, 0.5, 1 - 2 * band], [0.5, 0.5, 1 - 5 * band]])
    vals = mollify_zero(v, one, mid, delta, ball_small, emap)
    assert np.all((vals >= 0) & (vals <= 1 + 1e-14))


def test_variant_errors(smap, emap, ball_small):
    with pytest.raises(ParameterError):
        MollifierVariant("x")
    f = _field("g")
    with pytest.raises(UsageError):
        mollify(MollifierVariant("g", True), f, _points(2), 0.1, ball_small, smap)
    with pytest.raises(UsageError):
        mollify_zero(MollifierVariant("g"), f, _points(2), 0.1, ball_small, emap)
    with pytest.raises(InclusionError):
        mollify(MollifierVariant("g"), f, np.array([[0.99, 0.5, 0.5]]), 0.3, ball_small, ShrinkMap(D, 3.0))
    with pytest.raises(UsageError):
        commutation_defect("b", f, _points(2), 0.1, ball_small, smap)


@pytest.mark.parametrize("tag", ["g", "c", "d"])
@pytest.mark.parametrize("zero", [False, True])
def test_commutation_uniform_delta(tag, zero, smap, emap, ball_small):
    f = scalar_battery()[0] if tag == "g" else vector_battery()[1]
    lhs, rhs = commutation_defect(tag, f, _points(40, 3), 0.2, ball_small, emap if zero else smap)
    assert np.abs(lhs - rhs).max() <= 1e-10


@pytest.mark.parametrize("tag", ["g", "c", "d"])
def test_commutation_variable_delta(tag, ball_small):
    mesh = generate_cube_mesh(3, grading=1.4)
    delta = DeltaField.mesh_scaled(0.1, mesh.meshsize)
    sm = ShrinkMap.default(D, variable_delta=True)
    f = scalar_battery()[2] if tag == "g" else vector_battery()[2]
    lhs, rhs = commutation_defect(tag, f, _points(40, 4, 0.05, 0.95), delta, ball_small, sm)
    assert np.abs(lhs - rhs).max() <= 1e-10


def test_gradient_through_kernel_derivative(smap):
    # independent route: differentiate the kernel instead of the field
    q = build_ball_quadrature(30)
    f = scalar_battery()[1]
    x = _points(5, 7, 0.2, 0.8)
    delta = 0.2
    alpha, r = 1 - delta * K, smap.radius
    y = q.nodes
    grad_rho = q.kernel.eta * _bump(np.sum(y * y, 1))[:, None] * (-2 * y / (1 - np.sum(y * y, 1))[:, None] ** 2)
    t = delta * K * D.star_center
    got = np.array([-(alpha / (delta * r)) * np.einsum("q,qd->d", q.weights * f(alpha * p + t + delta * r * y), grad_rho)
                    for p in x])
    ref = mollify(MollifierVariant("c"), f.grad, x, delta, q, smap)
    assert np.allclose(got, ref, rtol=1e-4, atol=1e-4)


def test_mollified_field_derivatives(smap, ball_small):
    f = scalar_battery()[0]
    mf = MollifiedField(MollifierVariant("g"), f, 0.1, ball_small, smap)
    x = _points(5)
    assert np.allclose(mf.grad(x), mollify(MollifierVariant("c"), f.grad, x, 0.1, ball_small, smap))
    assert mf.curl is None and mf.div is None


def test_trace_pairing_examples(mesh4):
    mq = MeshQuadrature(mesh4, 3)
    a, b = constant_field([1.0, 2.0, 3.0]), constant_field([0.0, -1.0, 4.0])
    assert abs(trace_pairing("curl", a, b, mq)) <= 1e-14
    bump = FieldEvaluator.vector(["(sin(pi*x)*sin(pi*y)*sin(pi*z))**3"] * 3)
    w = FieldEvaluator.vector(("exp(x)", "y*z", "cos(z)"))
    q = FieldEvaluator.scalar("exp(x + y) + z")
    assert abs(trace_pairing("curl", bump, w, mq)) <= 1e-3
    assert abs(trace_pairing("div", bump, q, mq)) <= 1e-3
    # a field with nonzero trace pairs to a nonzero value
    assert abs(trace_pairing("div", constant_field([1.0, 0, 0]), q, mq)) > 0.1
    with pytest.raises(UsageError):
        trace_pairing("curl", lambda x: x, w, mq)
    with pytest.raises(UsageError):
        trace_pairing("rot", a, b, mq)


@pytest.mark.parametrize("kind", ["curl", "div"])
def test_zero_extension_trace_kernel(kind, emap):
    mq = MeshQuadrature(generate_cube_mesh(2), 8)
    q = build_ball_quadrature(4)
    g = vector_battery("tangential" if kind == "curl" else "normal")[1]
    w = FieldEvaluator.vector(("exp(x)", "y*z", "cos(z)")) if kind == "curl" else FieldEvaluator.scalar("exp(x+y)+z")
    assert abs(zero_extension_trace_pairing(kind, g, w, 0.1, q, emap, mq)) <= 1e-8


@pytest.mark.parametrize("p", [1, 2, np.inf])
def test_lp_stability(p, smap, ball_small, mesh4):
    # change of variables: ||K f||_p <= (1 - delta kappa)^(-3/p) ||f||_p <= 2^(3/p) ||f||_p
    delta = 0.1
    mq = MeshQuadrature(mesh4, 3)
    sharp = (1 - delta * K) ** (-3 / p)
    fields = scalar_battery() + [FieldEvaluator.scalar("exp(3*x)*cos(5*y)"), FieldEvaluator.scalar("(x-0.5)**4")]
    for f in fields:
        kf = MollifiedField(MollifierVariant("g"), f, delta, ball_small, smap)
        ratio = lp_error(kf, None, p, mesh4, quad=mq) / lp_error(f, None, p, mesh4, quad=mq)
        assert ratio <= 1.01 * sharp <= 1.01 * 2 ** (3 / p)


def test_zero_extension_consistency_rate(mesh4):
    f = vanishing_battery(0)[1]
    mq = MeshQuadrature(mesh4, 3)
    q = build_ball_quadrature(8)
    errs = []
    for delta in (0.1, 0.05, 0.025):
        a = mollify(MollifierVariant("g"), f, mq.points, delta, q, ShrinkMap.default(D))
        b = mollify_zero(MollifierVariant("g", True), f, mq.points, delta, q, ExpandMap.default(D))
        errs.append(np.sqrt(mq.weights @ (a - b) ** 2))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert orders.min() >= 0.9


@settings(max_examples=10, deadline=None)
@given(st.floats(0.02, 0.3))
def test_error_decreases_with_delta(delta):
    f = scalar_battery()[0]
    e1 = mollification_error("g", f, delta, D, ball_order=6, mesh=generate_cube_mesh(2))
    e2 = mollification_error("g", f, delta / 4, D, ball_order=6, mesh=generate_cube_mesh(2))
    assert e2 < e1
