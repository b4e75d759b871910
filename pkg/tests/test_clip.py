import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqinterp.clip import clip_simplex

UNIT_TET = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
CUBE_N = np.vstack([np.eye(3), -np.eye(3)])


@pytest.mark.parametrize("cut, vol", [(0.5, 1 / 6 - 0.125 / 6), (1.0, 1 / 6), (0.0, 0.0), (2.0, 1 / 6)])
def test_tet_halfspace(cut, vol):
    _, v = clip_simplex(UNIT_TET, [[1, 0, 0]], [cut])
    assert v.sum() == pytest.approx(vol, abs=1e-15)


def test_triangle_and_segment():
    tri = UNIT_TET[:3]
    _, a = clip_simplex(tri, [[1, 0, 0]], [0.5])
    assert a.sum() == pytest.approx(0.5 - 0.125)
    _, l = clip_simplex(np.array([[-1.0, 0.5, 0.5], [2.0, 0.5, 0.5]]), CUBE_N, [1, 1, 1, 0, 0, 0])
    assert l.sum() == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
def test_complementary_pieces(seed, c):
    # the two sides of any plane partition the simplex
    rng = np.random.default_rng(seed)
    s = rng.random((4, 3))
    n = rng.standard_normal(3)
    off = n @ s.mean(axis=0) + (c - 0.5) * np.abs(n).sum()
    vol = abs(np.linalg.det(s[1:] - s[0])) / 6
    _, a = clip_simplex(s, [n], [off])
    _, b = clip_simplex(s, [-n], [-off])
    assert a.sum() + b.sum() == pytest.approx(vol, rel=1e-10, abs=1e-14)
