import json

import numpy as np
import pytest

import cqinterp.cli as cli
from cqinterp.cli import run
from cqinterp.mesh import generate_cube_mesh, write_mesh


def test_mesh_info(capsys):
    assert run(["mesh-info", "--cube", "1"]) == 0
    out = capsys.readouterr().out
    assert "V=8 E=19 F=18 T=6" in out and "euler=1" in out


def test_mesh_file(tmp_path, capsys):
    p = tmp_path / "m.txt"
    write_mesh(generate_cube_mesh(2), p)
    assert run(["mesh-info", "--mesh", str(p)]) == 0
    assert "T=48" in capsys.readouterr().out
    bad = tmp_path / "bad.txt"
    bad.write_text("tetmesh 3\nvertices 2\n0 0 0\n")
    assert run(["mesh-info", "--mesh", str(bad)]) == 2


@pytest.mark.parametrize("argv", [
    ["nonsense"],
    ["mesh-info", "--bogus"],
    ["mesh-info", "--cube", "0"],
    ["mesh-info", "--cube", "2", "--mesh", "x"],
    ["mesh-info", "--levels", "0"],
    ["quasi-interp", "--epsilon", "abc"],
    ["commute-check", "--ball-order", "2"],
    ["mesh-info", "--threads", "0"],
    ["mesh-info", "--domain", "missing.json"],
    ["project-check", "--cube", "2", "--epsilon", "0.9"],
])
def test_validation_errors_exit_2(argv):
    assert run(argv) == 2


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\ncube = 2\nlevels=2\n")
    assert run(["mesh-info", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "T=48" in out and "T=384" in out
    # flags override config entries
    assert run(["mesh-info", "--config", str(cfg), "--cube", "1", "--levels", "1"]) == 0
    assert "T=6\n" in capsys.readouterr().out.replace(" ", "\n")
    cfg.write_text("cube = 2\ncolour = red\n")
    assert run(["mesh-info", "--config", str(cfg)]) == 2
    cfg.write_text("cube = two\n")
    assert run(["mesh-info", "--config", str(cfg)]) == 2


def test_domain_file(tmp_path):
    p = tmp_path / "dom.json"
    n = np.vstack([np.eye(3), -np.eye(3)])
    p.write_text(json.dumps({"halfspaces": np.hstack([n, [[1], [1], [1], [0], [0], [0]]]).tolist(),
                             "star_center": [0.5, 0.5, 0.5], "star_radius": 0.5}))
    assert run(["mesh-info", "--cube", "1", "--domain", str(p)]) == 0
    p.write_text(json.dumps({"halfspaces": [[1, 0, 0, 1]], "unknown": 3}))
    assert run(["mesh-info", "--domain", str(p)]) == 2


def test_commute_check_csv_deterministic(tmp_path):
    args = ["commute-check", "--space", "g", "--ball-order", "6", "--seed", "7"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "commute_check.csv").read_text()
    assert a == (tmp_path / "b" / "commute_check.csv").read_text()
    lines = a.splitlines()
    assert lines[0] == "tag,field,point,lhs,rhs,abs_diff"
    assert len(lines) == 1 + 3 * (50 + 8)  # samples plus the cube corners


def test_commute_check_zero_extension(tmp_path):
    assert run(["commute-check", "--space", "d", "--bc", "--ball-order", "5"]) == 0


def test_trace_check(tmp_path):
    assert run(["trace-check", "--ball-order", "4", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "trace_check.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 9


def test_mollify_rate(tmp_path):
    assert run(["mollify-rate", "--space", "g", "--ball-order", "6", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "mollify_rate.csv").read_text().splitlines()
    assert rows[0] == "tag,field,delta,error,observed_order" and len(rows) == 1 + 3 * 4


def test_project_and_quasi_interp(tmp_path, capsys):
    assert run(["project-check", "--cube", "2", "--space", "b", "--epsilon", "0.0161"]) == 0
    assert run(["quasi-interp", "--cube", "2", "--space", "d", "--epsilon", "0.0161",
                "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "quasi_interp.csv").read_text().splitlines()
    assert rows[0] == "space,bc,field,h,l2_error" and len(rows) == 4


def test_failed_check_exit_1(monkeypatch):
    monkeypatch.setattr(cli, "PROJECT_TOL", -1.0)
    assert run(["project-check", "--cube", "2", "--space", "b", "--epsilon", "0.0161"]) == 1


def test_poincare(tmp_path, capsys):
    assert run(["poincare", "--cube", "2", "--bc", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "poincare.csv").read_text().splitlines()
    assert text[0] == "variant,h,dim,ratio,residual,method"
    assert text[1].startswith("xn,")
