"""Extension-free mollification and commuting quasi-interpolation on tetrahedral meshes."""

from cqinterp.geometry import StarDomain, ShrinkMap, ExpandMap, unit_cube
from cqinterp.kernel import Kernel, BallQuadrature, build_ball_quadrature
from cqinterp.mesh import SimplicialMesh, generate_cube_mesh

__all__ = [
    "StarDomain",
    "ShrinkMap",
    "ExpandMap",
    "unit_cube",
    "Kernel",
    "BallQuadrature",
    "build_ball_quadrature",
    "SimplicialMesh",
    "generate_cube_mesh",
]

__version__ = "0.1.0"
