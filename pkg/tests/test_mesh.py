import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqinterp.errors import MeshParseError, StructuralError
from cqinterp.mesh import (
    SimplicialMesh, epsilon_max, generate_cube_mesh, locate_point, read_mesh, write_mesh,
)
from cqinterp.geometry import unit_cube

UNIT_TET_V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_cube_counts(n):
    m = generate_cube_mesh(n)
    assert m.n_vertices == (n + 1) ** 3
    assert m.n_cells == 6 * n**3
    assert m.n_edges == 3 * n * (n + 1) ** 2 + 3 * n**2 * (n + 1) + n**3
    assert m.euler_characteristic() == 1
    assert m.volumes.sum() == pytest.approx(1.0)
    assert np.all(m.volumes > 0)
    assert len(m.boundary_faces) == 12 * n**2


def test_unit_cube_one_counts(mesh1):
    assert (mesh1.n_vertices, mesh1.n_edges, mesh1.n_faces, mesh1.n_cells) == (8, 19, 18, 6)


def test_single_tet():
    m = SimplicialMesh.from_arrays(UNIT_TET_V, [[0, 1, 2, 3]])
    assert (m.n_edges, m.n_faces) == (6, 4)
    assert m.volumes[0] == pytest.approx(1 / 6)
    assert np.array_equal(m.edges, [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


def test_orientation_repair():
    m = SimplicialMesh.from_arrays(UNIT_TET_V, [[0, 2, 1, 3]])
    assert m.repaired_cells == (0,)
    assert m.volumes[0] > 0


@pytest.mark.parametrize("cells, msg", [
    ([[0, 1, 2, 2]], "degenerate|repeated"),
    ([[0, 1, 2, 7]], "out of range"),
    ([[0, 1, 2, 3], [0, 1, 2, 3]], "repeated"),
])
def test_structural_errors(cells, msg):
    with pytest.raises(StructuralError, match=msg):
        SimplicialMesh.from_arrays(UNIT_TET_V, cells)


def test_degenerate_cell():
    v = UNIT_TET_V.copy()
    v[3] = [1, 1, 0]
    with pytest.raises(StructuralError):
        SimplicialMesh.from_arrays(v, [[0, 1, 2, 3]])


def test_boundary_normals_outward(mesh2):
    c = mesh2.vertices[mesh2.faces[mesh2.boundary_faces]].mean(axis=1)
    nrm = mesh2.face_normals[mesh2.boundary_faces]
    assert np.all(np.einsum("ij,ij->i", c - 0.5, nrm) > 0)


def test_locate_examples(mesh1):
    c, lam = mesh1.locate(np.array([0.2, 0.3, 0.4]))
    assert c >= 0 and np.all(lam >= -1e-12) and lam.sum() == pytest.approx(1.0)
    assert locate_point(mesh1, [1.5, 0, 0]) is None
    # vertex and face points are found in some cell
    cells, _ = mesh1.locate(np.array([[1.0, 1.0, 1.0], [0.5, 0.5, 0.0]]))
    assert np.all(cells >= 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_locate_reconstructs_point(seed):
    m = generate_cube_mesh(3, grading=1.3)
    x = np.random.default_rng(seed).random((50, 3))
    cells, lam = m.locate(x)
    assert np.all(cells >= 0)
    xv = m.vertices[m.cells_sorted[cells]]
    assert np.allclose(np.einsum("nk,nkd->nd", lam, xv), x, atol=1e-13)
    assert np.all(lam >= -1e-12)


def test_io_roundtrip(tmp_path, mesh2):
    p = tmp_path / "m.txt"
    write_mesh(mesh2, p)
    m = read_mesh(p)
    assert np.array_equal(m.vertices, mesh2.vertices)
    assert np.array_equal(m.cells, mesh2.cells)


@pytest.mark.parametrize("text, line", [
    ("tetmesh 2\n", 1),
    ("tetmesh 3\nvertices 1\n0 0\n", 3),
    ("tetmesh 3\nvertices 1\n0 0 x\n", 3),
    ("tetmesh 3\nvertices 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\ncells 1\n0 1 2 9\n", 8),
    ("tetmesh 3\nvertices 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\ncells 1\n0 1 2 3\nextra\n", 9),
    ("tetmesh 3\nvertices 4\n0 0 0\n", 4),
])
def test_parse_errors(tmp_path, text, line):
    p = tmp_path / "bad.txt"
    p.write_text(text)
    with pytest.raises(MeshParseError) as exc:
        read_mesh(p)
    assert exc.value.line == line


def test_meshsize_field(mesh2):
    h = mesh2.meshsize
    assert h.is_constant
    assert h.max_value == pytest.approx(np.sqrt(3) / 2)
    g = generate_cube_mesh(4, grading=2.0).meshsize
    assert not g.is_constant and g.lipschitz > 0
    x = np.array([[0.31, 0.37, 0.43]])
    e = np.array([1e-6, 0, 0])
    fd = (g.evaluate(x + e) - g.evaluate(x - e)) / 2e-6
    assert fd[0] == pytest.approx(g.gradient(x)[0, 0], rel=1e-6)


def test_epsilon_max_scales_invariantly():
    d = unit_cube()
    r = d.kappa * d.star_radius
    e4 = epsilon_max(generate_cube_mesh(4), d, r)["eps_max"]
    e8 = epsilon_max(generate_cube_mesh(8), d, r)["eps_max"]
    assert e4 == pytest.approx(0.12940952255126043, rel=1e-12)
    assert 0 < e8 <= e4 * (1 + 1e-12)
