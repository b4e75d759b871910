"""Acceptance criteria 1-10; each test prints one PASS/FAIL line."""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from cqinterp.fespace import FEFunction, FESpace, discrete_diff_matrix, interpolate_canonical
from cqinterp.fields import scalar_battery, vanishing_battery, vector_battery
from cqinterp.geometry import ExpandMap, ShrinkMap, unit_cube
from cqinterp.harness import mollify_rate, poincare_study, quasi_interp_rate
from cqinterp.kernel import _bump, build_ball_quadrature
from cqinterp.mesh import generate_cube_mesh
from cqinterp.mollify import MollifierVariant, commutation_defect, mollify_zero, zero_extension_trace_pairing
from cqinterp.quadrature import MeshQuadrature
from cqinterp.quasiinterp import (
    assemble_complex, cached_epsilon_max, calibrate_epsilon, check_discrete_commutation, complex_spaces,
    make_smoother, quasi_interpolate,
)

D = unit_cube()
SQRT2PI = np.sqrt(2) * np.pi
KINDS = ["P1", "N0", "RT0", "P0"]


def report(num, ok, detail, elapsed, budget):
    ok = bool(ok) and elapsed < budget
    line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}  ({elapsed:.1f}s, budget {budget:g}s)"
    ACCEPTANCE_LINES[num] = line
    print(line)
    return ok


def _radial_eta():
    t, w = np.polynomial.legendre.leggauss(20)
    edges = np.linspace(0.0, 1.0, 501)
    a, b = edges[:-1, None], edges[1:, None]
    r = (0.5 * (b - a) * t + 0.5 * (a + b)).ravel()
    wr = (0.5 * (b - a) * w).ravel()
    return 1.0 / (4 * np.pi * np.sum(wr * r**2 * _bump(r**2)))


def test_criterion_01_kernel():
    t0 = time.time()
    q = build_ball_quadrature()
    W = q.kernel_weights
    s = abs(W.sum() - 1.0)
    m1 = np.abs(W @ q.nodes).max()
    rel = abs(q.kernel.eta - _radial_eta()) / _radial_eta()
    ok = s <= 1e-15 and m1 <= 1e-14 and rel <= 1e-6
    assert report(1, ok, f"|sum-1|={s:.1e} first moment={m1:.1e} eta rel={rel:.1e}", time.time() - t0, 1)


def test_criterion_02_continuous_commutation():
    t0 = time.time()
    q = build_ball_quadrature(24)
    x = np.random.default_rng(2).random((200, 3))
    worst = 0.0
    for gmap in (ShrinkMap.default(D), ExpandMap.default(D)):
        for tag in ("g", "c", "d"):
            fields = scalar_battery() if tag == "g" else vector_battery()
            for f in fields:
                lhs, rhs = commutation_defect(tag, f, x, 0.1, q, gmap)
                worst = max(worst, float(np.abs(lhs - rhs).max()))
    assert report(2, worst <= 1e-10, f"max defect={worst:.2e}", time.time() - t0, 30)


def test_criterion_03_mollification_rate():
    t0 = time.time()
    deltas = (0.1, 0.05, 0.025, 0.0125)
    worst = {}
    for zero in (False, True):
        for tag in ("g", "c", "d", "b"):
            rank = 0 if tag in ("g", "b") else 1
            fields = vanishing_battery(rank) if zero else (scalar_battery() if rank == 0 else vector_battery())
            for f in fields:
                o = mollify_rate(tag, f, deltas, D, zero_extension=zero).min_order
                key = ("K0 " if zero else "K ") + tag
                worst[key] = min(worst.get(key, np.inf), o)
    lo = min(worst.values())
    detail = " ".join(f"{k}:{v:.2f}" for k, v in worst.items())
    assert report(3, lo >= 0.9, f"min order {lo:.3f} [{detail}]", time.time() - t0, 120)


def test_criterion_04_compact_support():
    t0 = time.time()
    q = build_ball_quadrature()
    emap = ExpandMap.default(D)
    rng = np.random.default_rng(4)
    fields = scalar_battery() + [lambda p: np.ones(p.shape[0])]
    nz, count = 0, 0
    for delta in (0.2, 0.1, 0.05):
        band = delta * emap.zeta / (1 + delta * D.kappa)
        pts = rng.random((300, 3))
        axis = rng.integers(0, 3, 300)
        side = rng.integers(0, 2, 300)
        dist = band * rng.random(300) * (1 - 1e-9)
        pts[np.arange(300), axis] = np.where(side == 1, 1 - dist, dist)
        for f in fields:
            v = mollify_zero(MollifierVariant("g", True), f, pts, delta, q, emap)
            nz += int(np.count_nonzero(v))
            count += len(v)
    assert report(4, nz == 0, f"nonzero values {nz} of {count}", time.time() - t0, 10)


def test_criterion_05_trace_kernel():
    t0 = time.time()
    q = build_ball_quadrature(6)
    mq = MeshQuadrature(generate_cube_mesh(2), 8)
    emap = ExpandMap.default(D)
    ws = vector_battery()
    qs = scalar_battery()
    worst = 0.0
    for g in vector_battery("tangential"):
        for w in ws:
            worst = max(worst, abs(zero_extension_trace_pairing("curl", g, w, 0.1, q, emap, mq)))
    for g in vector_battery("normal"):
        for s in qs:
            worst = max(worst, abs(zero_extension_trace_pairing("div", g, s, 0.1, q, emap, mq)))
    assert report(5, worst <= 1e-8, f"max |pairing|={worst:.2e}", time.time() - t0, 60)


def test_criterion_06_de_rham(mesh4):
    t0 = time.time()
    exact, worst = True, 0.0
    for bc in (False, True):
        s = {k: FESpace(mesh4, k, bc) for k in KINDS}
        G = discrete_diff_matrix("g", s["P1"], s["N0"])
        C = discrete_diff_matrix("c", s["N0"], s["RT0"])
        Dv = discrete_diff_matrix("d", s["RT0"], s["P0"])
        exact &= (C @ G).count_nonzero() == 0 and (Dv @ C).count_nonzero() == 0
        exact &= G.dtype.kind == "i" and C.dtype.kind == "i" and Dv.dtype.kind == "i"
        for f in scalar_battery(bc):
            d = G @ interpolate_canonical(s["P1"], f).coeffs - interpolate_canonical(s["N0"], f.grad).coeffs
            worst = max(worst, np.abs(d).max())
        for g in vector_battery("tangential" if bc else None):
            d = C @ interpolate_canonical(s["N0"], g).coeffs - interpolate_canonical(s["RT0"], g.curl).coeffs
            worst = max(worst, np.abs(d).max())
        for g in vector_battery("normal" if bc else None):
            d = Dv @ interpolate_canonical(s["RT0"], g).coeffs - interpolate_canonical(s["P0"], g.div).coeffs
            worst = max(worst, np.abs(d).max())
    ok = exact and worst <= 1e-11
    assert report(6, ok, f"CG=0,DC=0 exact: {exact}; diagram defect={worst:.2e}", time.time() - t0, 30)


@pytest.fixture(scope="module")
def calibrated(mesh4):
    """Per complex on n=4: (epsilon, matrices keyed by tag, calibration seconds)."""
    out = {}
    for bc in (False, True):
        t0 = time.time()
        spaces = list(complex_spaces(mesh4, bc).values())
        start = cached_epsilon_max(mesh4, D, make_smoother(spaces[0], 0.1, D).spread)
        eps = calibrate_epsilon(spaces, start, D)
        out[bc] = (eps, assemble_complex(mesh4, eps, bc, D), time.time() - t0)
    return out


def test_criterion_07_neumann_and_projection(calibrated):
    t0 = time.time()
    rng = np.random.default_rng(7)
    norm_max, proj_max = 0.0, 0.0
    for bc, (eps, Ms, _) in calibrated.items():
        for M in Ms.values():
            norm_max = max(norm_max, M.defect_mass_norm(), M.defect_mass_norm_exact(), M.defect_inf_norm())
            for _ in range(10):
                u = FEFunction(M.space, rng.standard_normal(M.dim))
                v = quasi_interpolate(M, u)
                proj_max = max(proj_max, M.space.l2_norm(v.coeffs - u.coeffs) / u.l2_norm())
    elapsed = time.time() - t0 + sum(c[2] for c in calibrated.values())
    ok = norm_max <= 0.5 and proj_max <= 1e-10
    eps = ", ".join(f"{'bc' if bc else 'no bc'} eps={c[0]:.5f}" for bc, c in calibrated.items())
    assert report(7, ok, f"max ||I-M||={norm_max:.3f} projection={proj_max:.1e} ({eps})", elapsed, 300)


def test_criterion_08_stability_and_rates(calibrated):
    t0 = time.time()
    eps = calibrated[False][0]
    ok, parts = True, []
    for kind in KINDS:
        f = scalar_battery()[0] if kind in ("P1", "P0") else vector_battery()[0]
        stab = []
        t = quasi_interp_rate(kind, f, [4, 8, 16], eps, domain=D, stability=stab)
        need = 1.8 if kind == "P1" else 0.9
        spread = max(stab) / min(stab)
        ok &= t.min_order >= need and spread < 2.0
        parts.append(f"{kind} order {t.min_order:.2f} (>= {need}) stability spread {spread:.3f}")
    assert report(8, ok, "; ".join(parts), time.time() - t0, 900)


def test_criterion_09_discrete_commutation(calibrated):
    t0 = time.time()
    worst = {}
    for bc, (_, Ms, _) in calibrated.items():
        f = scalar_battery(bc)[1]
        g = vector_battery("tangential" if bc else None)[0]
        h = vector_battery("normal" if bc else None)[2]
        worst[bc] = check_discrete_commutation(Ms["g"], Ms["c"], Ms["d"], Ms["b"], f, g, h)["max"]
    top = max(worst.values())
    detail = f"max defect no bc={worst[False]:.1e} bc={worst[True]:.1e}"
    assert report(9, top <= 1e-8, detail, time.time() - t0, 300)


def test_criterion_10_discrete_poincare():
    t0 = time.time()
    rows = poincare_study([4, 8, 16], with_bc=True).rows
    r = np.array([row.ratio for row in rows])
    above = SQRT2PI <= r[-1] <= 1.1 * SQRT2PI
    spread = (r.max() - r.min()) / r.min()
    ok = len(r) == 3 and r.min() >= 3.5 and spread < 0.25 and above
    detail = (f"ratios {', '.join(f'{v:.5f}' for v in r)}; min>=3.5: {r.min() >= 3.5}; "
              f"spread {spread:.3f}<0.25: {spread < 0.25}; finest in [sqrt2 pi, 1.1 sqrt2 pi]: {above}")
    assert report(10, ok, detail, time.time() - t0, 600)
