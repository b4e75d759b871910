"""Command-line driver for the studies.

Exit codes: 0 success, 2 invalid input or configuration, 1 numerical check failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from cqinterp.errors import (
    CalibrationError, ConfigurationError, CQError, DomainError, InclusionError, MeshParseError,
    ParameterError, StructuralError, UsageError,
)
from cqinterp.fespace import KINDS, TAG_TO_KIND, FEFunction, FESpace
from cqinterp.fields import scalar_battery, vanishing_battery, vector_battery
from cqinterp.geometry import ExpandMap, ShrinkMap, domain_from_config, sample_domain
from cqinterp.harness import fmt, lp_error, mollify_rate, poincare_study
from cqinterp.kernel import DEFAULT_BALL_ORDER, build_ball_quadrature
from cqinterp.mesh import generate_cube_mesh, read_mesh
from cqinterp.mollify import commutation_defect, zero_extension_trace_pairing
from cqinterp.quadrature import MeshQuadrature
from cqinterp.quasiinterp import (
    assemble_smoothed_interp_matrix, cached_epsilon_max, calibrate_epsilon, complex_spaces,
    quasi_interpolate,
)

COMMANDS = ("mollify-rate", "commute-check", "trace-check", "quasi-interp", "project-check",
            "poincare", "mesh-info")
CONFIG_KEYS = {"cube", "mesh", "space", "bc", "epsilon", "ball_order", "out", "seed", "threads",
               "domain", "levels"}
RATE_DELTAS = (0.1, 0.05, 0.025, 0.0125)
COMMUTE_TOL = 1e-10
TRACE_TOL = 1e-8
PROJECT_TOL = 1e-10
RATE_MIN = 0.9


class CheckFailed(Exception):
    """A numerical invariant did not hold; the message names it."""


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; flags override its entries")
    common.add_argument("--cube", type=int, help="unit-cube mesh with n subdivisions per axis")
    common.add_argument("--mesh", help="mesh file (tetmesh format)")
    common.add_argument("--space", choices=["g", "c", "d", "b"], help="space / mollifier tag")
    common.add_argument("--bc", action="store_true", default=None, help="boundary-condition variant")
    common.add_argument("--epsilon", help="'auto' or a number")
    common.add_argument("--ball-order", dest="ball_order", type=int, help="ball rule points per axis")
    common.add_argument("--levels", type=int, help="number of uniform refinements to run")
    common.add_argument("--out", help="output directory for CSV files")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("--domain", help="'unit_cube' or a JSON file with halfspaces")
    p = argparse.ArgumentParser(prog="cqinterp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for c in COMMANDS:
        sub.add_parser(c, parents=[common])
    return p


def _read_config(path) -> Dict[str, str]:
    out = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    for k, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {k}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"config line {k}: unknown key {key!r}")
        out[key] = val
    return out


_CASTS = {"cube": int, "ball_order": int, "seed": int, "threads": int, "levels": int,
          "bc": lambda v: v.lower() in ("1", "true", "yes", "on")}


def _resolve(args) -> argparse.Namespace:
    cfg = _read_config(args.config) if args.config else {}
    for key, val in cfg.items():
        if getattr(args, key, None) is None:
            try:
                setattr(args, key, _CASTS.get(key, str)(val))
            except ValueError:
                raise ConfigurationError(f"config value for {key!r} is invalid: {val!r}") from None
    args.bc = bool(args.bc)
    args.seed = 0 if args.seed is None else args.seed
    args.levels = 1 if args.levels is None else args.levels
    if args.cube is not None and args.mesh is not None:
        raise ConfigurationError("give --cube or --mesh, not both")
    if args.cube is not None and args.cube < 1:
        raise ConfigurationError("--cube needs n >= 1")
    if args.levels < 1:
        raise ConfigurationError("--levels needs at least 1")
    if args.ball_order is not None and args.ball_order < 3:
        raise ConfigurationError("--ball-order needs at least 3")
    if args.seed < 0 or args.seed >= 2**64:
        raise ConfigurationError("--seed must be an unsigned 64-bit integer")
    if args.epsilon not in (None, "auto"):
        try:
            args.epsilon = float(args.epsilon)
        except ValueError:
            raise ConfigurationError(f"--epsilon must be 'auto' or a number, got {args.epsilon!r}") from None
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigurationError("--threads needs at least 1")
        import numba

        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    args.domain_obj = _domain(args.domain)
    return args


def _domain(desc):
    if desc in (None, "unit_cube"):
        return domain_from_config("unit_cube")
    try:
        with open(desc) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read domain file {desc}: {exc}") from None
    return domain_from_config(data)


def _meshes(args):
    if args.mesh is not None:
        if args.levels != 1:
            raise ConfigurationError("--levels needs --cube")
        return [read_mesh(args.mesh)]
    n = 4 if args.cube is None else args.cube
    return [generate_cube_mesh(n * 2**k) for k in range(args.levels)]


def _write_csv(args, name, header, rows):
    if args.out is None:
        return
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, name), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _tags(args):
    return [args.space] if args.space else ["g", "c", "d", "b"]


def _battery(tag, bc):
    if tag in ("g", "b"):
        return scalar_battery(bc)
    return vector_battery(None if not bc else ("tangential" if tag == "c" else "normal"))


# ---------------------------------------------------------------- commands
def cmd_mesh_info(args):
    for m in _meshes(args):
        print(f"V={m.n_vertices} E={m.n_edges} F={m.n_faces} T={m.n_cells}")
        print(f"boundary_faces={int(m.is_boundary_face.sum())} euler={m.euler_characteristic()}")
        print(f"volume={fmt(float(m.volumes.sum()))} h_max={fmt(float(m.diameters.max()))} "
              f"shape_regularity={fmt(m.shape_regularity())} repaired_cells={len(m.repaired_cells)}")


def cmd_mollify_rate(args):
    d = args.domain_obj
    order = 8 if args.ball_order is None else args.ball_order
    rows, worst = [], np.inf
    for tag in _tags(args):
        fields = vanishing_battery(0 if tag in "gb" else 1) if args.bc else _battery(tag, False)
        for k, f in enumerate(fields):
            t = mollify_rate(tag, f, RATE_DELTAS, d, zero_extension=args.bc, ball_order=order)
            orders = [None] + t.orders
            for (delta, err), o in zip(t.rows, orders):
                rows.append((tag, k, delta, err, "" if o is None else o))
            worst = min(worst, t.min_order)
            print(f"{tag} field{k}: min order {t.min_order:.3f}")
    _write_csv(args, "mollify_rate.csv", ["tag", "field", "delta", "error", "observed_order"], rows)
    if worst < RATE_MIN:
        raise CheckFailed(f"mollification rate: observed order {worst:.3f} < {RATE_MIN}")


def cmd_commute_check(args):
    d = args.domain_obj
    q = build_ball_quadrature(DEFAULT_BALL_ORDER if args.ball_order is None else args.ball_order)
    x = sample_domain(d, 50, np.random.default_rng(args.seed))
    gmap = ExpandMap.default(d) if args.bc else ShrinkMap.default(d)
    rows, worst = [], 0.0
    for tag in [t for t in _tags(args) if t != "b"]:
        for k, f in enumerate(_battery(tag, False)):
            lhs, rhs = commutation_defect(tag, f, x, 0.1, q, gmap)
            diff = np.abs(lhs - rhs).reshape(len(x), -1).max(axis=1)
            for i in range(len(x)):
                rows.append((tag, k, " ".join(fmt(c) for c in x[i]),
                             " ".join(fmt(c) for c in np.ravel(lhs[i])),
                             " ".join(fmt(c) for c in np.ravel(rhs[i])), diff[i]))
            worst = max(worst, float(diff.max()))
    _write_csv(args, "commute_check.csv", ["tag", "field", "point", "lhs", "rhs", "abs_diff"], rows)
    print(f"max commutation defect {worst:.3e}")
    if worst > COMMUTE_TOL:
        raise CheckFailed(f"continuous commutation: defect {worst:.3e} > {COMMUTE_TOL}")


def cmd_trace_check(args):
    d = args.domain_obj
    q = build_ball_quadrature(6 if args.ball_order is None else args.ball_order)
    m = _meshes(args)[0] if (args.cube or args.mesh) else generate_cube_mesh(2)
    mq = MeshQuadrature(m, 8)
    emap = ExpandMap.default(d)
    rows, worst = [], 0.0
    for kind, bc in (("curl", "tangential"), ("div", "normal")):
        ws = vector_battery(None) if kind == "curl" else scalar_battery(False)
        for i, g in enumerate(vector_battery(bc)):
            for j, w in enumerate(ws):
                val = zero_extension_trace_pairing(kind, g, w, 0.1, q, emap, mq)
                rows.append((kind, i, j, val))
                worst = max(worst, abs(val))
    _write_csv(args, "trace_check.csv", ["kind", "g", "w", "pairing"], rows)
    print(f"max |pairing| {worst:.3e}")
    if worst > TRACE_TOL:
        raise CheckFailed(f"trace kernel: pairing {worst:.3e} > {TRACE_TOL}")


def _epsilon(args, mesh, spaces, history):
    if args.epsilon in (None, "auto"):
        sm_radius = (ExpandMap.default(args.domain_obj).zeta if args.bc
                     else ShrinkMap.default(args.domain_obj).radius)
        start = cached_epsilon_max(mesh, args.domain_obj, sm_radius)
        return calibrate_epsilon(spaces, start, args.domain_obj, history=history)
    return args.epsilon


def cmd_quasi_interp(args):
    meshes = _meshes(args)
    kind = TAG_TO_KIND[args.space or "g"]
    hist: List = []
    eps = _epsilon(args, meshes[0], list(complex_spaces(meshes[0], args.bc).values()), hist)
    for e, a, b in hist:
        print(f"calibration epsilon={fmt(e)} mass_norm={fmt(a)} inf_norm={fmt(b)}")
    _write_csv(args, "calibration.csv", ["epsilon", "mass_norm", "inf_norm"], hist)
    rows = []
    tag = args.space or "g"
    for m in meshes:
        M = assemble_smoothed_interp_matrix(FESpace(m, kind, args.bc), eps, args.domain_obj)
        quad = MeshQuadrature(m, 3)
        for k, f in enumerate(_battery(tag, args.bc)):
            u = quasi_interpolate(M, f)
            err = lp_error(f, u, 2, m, quad=quad)
            rows.append((kind, int(args.bc), k, float(m.diameters.max()), err))
            print(f"{kind} field{k} h={fmt(float(m.diameters.max()))} L2 error={fmt(err)}")
    _write_csv(args, "quasi_interp.csv", ["space", "bc", "field", "h", "l2_error"], rows)


def cmd_project_check(args):
    m = _meshes(args)[0]
    kinds = [TAG_TO_KIND[t] for t in _tags(args)]
    eps = _epsilon(args, m, list(complex_spaces(m, args.bc).values()), [])
    rng = np.random.default_rng(args.seed)
    rows, worst = [], 0.0
    for kind in kinds:
        M = assemble_smoothed_interp_matrix(FESpace(m, kind, args.bc), eps, args.domain_obj)
        for k in range(10):
            fh = FEFunction(M.space, rng.standard_normal(M.dim))
            u = quasi_interpolate(M, fh)
            rel = M.space.l2_norm(u.coeffs - fh.coeffs) / max(fh.l2_norm(), 1e-300)
            rows.append((kind, int(args.bc), k, rel))
            worst = max(worst, rel)
    _write_csv(args, "project_check.csv", ["space", "bc", "sample", "relative_defect"], rows)
    print(f"epsilon={fmt(eps)} max projection defect {worst:.3e}")
    if worst > PROJECT_TOL:
        raise CheckFailed(f"projection: defect {worst:.3e} > {PROJECT_TOL}")


def cmd_poincare(args):
    if args.mesh is not None:
        raise ConfigurationError("poincare runs on cube meshes (--cube)")
    n = 4 if args.cube is None else args.cube
    rep = poincare_study([n * 2**k for k in range(args.levels)], with_bc=args.bc)
    for r in rep.rows:
        print(f"h={fmt(r.h)} dim={r.dim} ratio={fmt(r.ratio)} residual={r.residual:.2e} ({r.method})")
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "poincare.csv"), "w") as fh:
            fh.write(rep.to_csv())


HANDLERS = {
    "mesh-info": cmd_mesh_info,
    "mollify-rate": cmd_mollify_rate,
    "commute-check": cmd_commute_check,
    "trace-check": cmd_trace_check,
    "quasi-interp": cmd_quasi_interp,
    "project-check": cmd_project_check,
    "poincare": cmd_poincare,
}


def run(argv: Optional[List[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args = _resolve(args)
        HANDLERS[args.command](args)
    except (ConfigurationError, ParameterError, UsageError, MeshParseError, StructuralError,
            DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckFailed as exc:
        print(f"FAILED: {exc}", file=sys.stderr)
        return 1
    except (CalibrationError, InclusionError, CQError) as exc:
        print(f"FAILED: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
