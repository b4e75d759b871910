import numpy as np
import pytest

import cqinterp.quasiinterp as qi
from cqinterp.errors import CalibrationError, ParameterError, UsageError
from cqinterp.fespace import FEFunction, FESpace, interpolate_canonical
from cqinterp.fields import scalar_battery, vector_battery
from cqinterp.mesh import generate_cube_mesh
from cqinterp.quasiinterp import (
    assemble_complex, assemble_smoothed_interp_matrix, calibrate_epsilon, check_discrete_commutation,
    quasi_interpolate,
)

# calibrated on the n=4 cube (shared by the four spaces of each complex)
EPS = {False: 0.016176190318907553, True: 0.021397556487895823}
KINDS = ["P1", "N0", "RT0", "P0"]


@pytest.fixture(scope="module")
def complexes(mesh2):
    return {bc: assemble_complex(mesh2, EPS[bc], bc) for bc in (False, True)}


@pytest.mark.parametrize("bc", [False, True])
@pytest.mark.parametrize("tag", ["g", "c", "d", "b"])
def test_projection_on_discrete_fields(complexes, bc, tag, rng):
    M = complexes[bc][tag]
    for _ in range(3):
        u = FEFunction(M.space, rng.standard_normal(M.dim))
        v = quasi_interpolate(M, u)
        assert M.space.l2_norm(v.coeffs - u.coeffs) <= 1e-10 * u.l2_norm()


@pytest.mark.parametrize("bc", [False, True])
def test_neumann_bound(complexes, bc):
    for M in complexes[bc].values():
        assert M.defect_mass_norm() <= 0.5
        assert M.defect_inf_norm() <= 0.5


def test_power_iteration_matches_dense(complexes):
    M = complexes[False]["c"]
    exact = M.defect_mass_norm_exact()
    assert M.defect_mass_norm(iterations=60) == pytest.approx(exact, rel=1e-3)


def test_projection_on_reproduced_polynomials(mesh2):
    from cqinterp.fields import FieldEvaluator

    f = FieldEvaluator.vector(("0.2 + 0.7*x", "-1 + 0.7*y", "2 + 0.7*z"))
    M = assemble_smoothed_interp_matrix(FESpace(mesh2, "RT0"), EPS[False])
    u = quasi_interpolate(M, f)
    assert np.allclose(u.coeffs, interpolate_canonical(M.space, f).coeffs, atol=1e-12)


@pytest.mark.parametrize("bc", [False, True])
def test_discrete_commutation(complexes, bc):
    c = complexes[bc]
    f = scalar_battery(bc)[1]
    g = vector_battery("tangential" if bc else None)[0]
    h = vector_battery("normal" if bc else None)[2]
    out = check_discrete_commutation(c["g"], c["c"], c["d"], c["b"], f, g, h)
    # dof quadrature on clipped images bounds the BC defect near 1e-10
    assert out["max"] <= 1e-8


def test_commutation_usage_errors(complexes, mesh2):
    c = complexes[False]
    with pytest.raises(UsageError):
        check_discrete_commutation(c["c"], c["g"], c["d"], c["b"])
    other = assemble_smoothed_interp_matrix(FESpace(mesh2, "P0"), 0.01)
    with pytest.raises(UsageError):
        check_discrete_commutation(c["g"], c["c"], c["d"], other)
    mixed = complexes[True]["b"]
    with pytest.raises(UsageError):
        check_discrete_commutation(c["g"], c["c"], c["d"], mixed)


def test_epsilon_validation(mesh2):
    sp = FESpace(mesh2, "P0")
    with pytest.raises(ParameterError):
        assemble_smoothed_interp_matrix(sp, -0.1)
    with pytest.raises(ParameterError):
        assemble_smoothed_interp_matrix(sp, 0.5)
    M = assemble_smoothed_interp_matrix(sp, 0.0)
    assert M.defect_inf_norm() <= 1e-15


def test_calibration_halves_until_bound(mesh2):
    hist = []
    sp = FESpace(mesh2, "N0")
    start = qi.cached_epsilon_max(mesh2, qi.unit_cube(), qi.make_smoother(sp, 0.1, qi.unit_cube()).spread)
    eps = calibrate_epsilon(sp, start, history=hist)
    assert hist[-1][0] == eps and max(hist[-1][1:]) <= qi.CALIBRATION_TARGET
    assert all(max(h[1:]) > qi.CALIBRATION_TARGET for h in hist[:-1])
    assert all(b[0] == pytest.approx(a[0] / 2) for a, b in zip(hist, hist[1:]))


def test_calibration_failure(mesh1):
    with pytest.raises(CalibrationError) as exc:
        calibrate_epsilon(FESpace(mesh1, "P0"), 0.05, target=-1.0)
    assert len(exc.value.history) == qi.MAX_HALVINGS + 1


def test_gmres_route_matches_lu(mesh2, monkeypatch):
    sp = FESpace(mesh2, "RT0")
    A = assemble_smoothed_interp_matrix(sp, EPS[False])
    monkeypatch.setattr(qi, "LU_MAX_DIM", 10)
    B = assemble_smoothed_interp_matrix(sp, EPS[False])
    assert B.lu is None
    b = np.random.default_rng(2).standard_normal(sp.dim)
    assert np.allclose(A.solve(b), B.solve(b), atol=1e-12)
