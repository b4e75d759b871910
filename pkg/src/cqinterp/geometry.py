"""Star-shaped polytopal domains and the radial shrinking/expansion maps.

The transversal field is the radial field ``j(x) = kappa * (x - x_c)`` with
``kappa = 1 / r_out``.  It points outward on the whole boundary of a polytope
that is star-shaped with respect to a ball centred at ``x_c``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import HalfspaceIntersection

from cqinterp.errors import ConfigurationError, DomainError, ParameterError


@dataclass(frozen=True)
class StarDomain:
    """Convex polytope ``{x : x . n_i <= b_i}`` with a star centre and radius."""

    normals: np.ndarray
    offsets: np.ndarray
    star_center: np.ndarray
    star_radius: float
    vertices: np.ndarray = field(repr=False)
    outer_radius: float = 0.0
    kappa: float = 0.0
    transversality_margin: float = 0.0

    @classmethod
    def from_halfspaces(cls, normals, offsets, star_center, star_radius=None):
        normals = np.asarray(normals, dtype=float).reshape(-1, 3)
        offsets = np.asarray(offsets, dtype=float).reshape(-1)
        center = np.asarray(star_center, dtype=float).reshape(3)
        if normals.shape[0] != offsets.shape[0] or normals.shape[0] < 4:
            raise ConfigurationError("need at least 4 halfspaces with matching offsets")
        lengths = np.linalg.norm(normals, axis=1)
        if np.any(np.abs(lengths - 1.0) > 1e-12):
            raise ConfigurationError("halfspace normals must have unit length")
        slack = offsets - normals @ center
        if star_radius is None:
            star_radius = float(slack.min())
        if star_radius <= 0 or np.any(slack < star_radius - 1e-14):
            raise ConfigurationError(
                f"ball B(x_c, {star_radius}) is not contained in the polytope"
            )
        hs = HalfspaceIntersection(np.hstack([normals, -offsets[:, None]]), center)
        verts = _unique_rows(hs.intersections)
        r_out = float(np.max(np.linalg.norm(verts - center, axis=1)))
        kappa = 1.0 / r_out
        return cls(
            normals=normals,
            offsets=offsets,
            star_center=center,
            star_radius=float(star_radius),
            vertices=verts,
            outer_radius=r_out,
            kappa=kappa,
            transversality_margin=kappa * float(slack.min()),
        )

    @property
    def tol(self) -> float:
        return 1e-12 * self.outer_radius

    def contains(self, x) -> np.ndarray:
        return domain_contains(self, x)

    def distance_to_boundary(self, x) -> np.ndarray:
        """Distance from interior points to the boundary (negative outside)."""
        x = np.real(np.asarray(x, dtype=complex if np.iscomplexobj(x) else float))
        return np.min(self.offsets - x @ self.normals.T, axis=-1)

    def volume(self) -> float:
        from scipy.spatial import ConvexHull

        return float(ConvexHull(self.vertices).volume)


def _unique_rows(a, decimals=12):
    _, idx = np.unique(np.round(a, decimals), axis=0, return_index=True)
    return a[np.sort(idx)]


def unit_cube() -> StarDomain:
    normals = np.vstack([np.eye(3), -np.eye(3)])
    offsets = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    return StarDomain.from_halfspaces(normals, offsets, [0.5, 0.5, 0.5], 0.5)


def domain_from_config(desc) -> StarDomain:
    """Build a domain from ``"unit_cube"`` or a mapping with explicit halfspaces."""
    if desc in (None, "unit_cube") or (isinstance(desc, dict) and desc.get("kind") == "unit_cube"):
        return unit_cube()
    if not isinstance(desc, dict):
        raise ConfigurationError(f"unrecognised domain description {desc!r}")
    unknown = set(desc) - {"kind", "halfspaces", "star_center", "star_radius"}
    if unknown:
        raise ConfigurationError(f"unknown domain keys: {sorted(unknown)}")
    try:
        hs = np.asarray(desc["halfspaces"], dtype=float)
        center = desc["star_center"]
        radius = desc["star_radius"]
    except KeyError as exc:
        raise ConfigurationError(f"domain description is missing {exc.args[0]!r}") from None
    return StarDomain.from_halfspaces(hs[:, :3], hs[:, 3], center, radius)


def domain_contains(d: StarDomain, x) -> np.ndarray:
    """Closed-set membership with tolerance ``1e-12 * r_out``.  Uses the real part."""
    x = np.real(np.asarray(x))
    return np.all(x @ d.normals.T <= d.offsets + d.tol, axis=-1)


class DeltaField:
    """Smoothing radius ``delta(x)``: a constant or ``eps * h(x)``."""

    def __init__(self, constant=None, epsilon=None, meshsize=None):
        if (constant is None) == (meshsize is None):
            raise ParameterError("give either a constant delta or (epsilon, meshsize)")
        self.constant = None if constant is None else float(constant)
        self.epsilon = None if epsilon is None else float(epsilon)
        self.meshsize = meshsize
        if self.constant is not None and not 0.0 <= self.constant <= 1.0:
            raise ParameterError(f"delta = {self.constant} outside [0, 1]")
        if meshsize is not None:
            if self.epsilon is None or self.epsilon < 0:
                raise ParameterError("mesh-scaled delta needs epsilon >= 0")
            if self.epsilon * meshsize.max_value > 1.0:
                raise ParameterError("epsilon * h exceeds 1 somewhere")

    @classmethod
    def mesh_scaled(cls, epsilon, meshsize):
        return cls(epsilon=epsilon, meshsize=meshsize)

    @property
    def is_uniform(self) -> bool:
        """True when delta takes a single value on the whole domain."""
        if self.constant is not None:
            return True
        return self.meshsize.is_constant

    @property
    def uniform_value(self) -> float:
        if self.constant is not None:
            return self.constant
        if not self.meshsize.is_constant:
            raise ParameterError("delta is not uniform")
        return self.epsilon * self.meshsize.max_value

    def value(self, x) -> np.ndarray:
        x = np.asarray(x)
        if self.constant is not None:
            return np.full(x.shape[:-1], self.constant, dtype=x.dtype if np.iscomplexobj(x) else float)
        return self.epsilon * self.meshsize.evaluate(x)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x)
        if self.constant is not None:
            return np.zeros(x.shape[:-1] + (3,))
        return self.epsilon * self.meshsize.gradient(x)

    def __repr__(self):
        if self.constant is not None:
            return f"DeltaField(constant={self.constant})"
        return f"DeltaField(epsilon={self.epsilon}, meshsize=...)"


def _as_delta(delta) -> DeltaField:
    return delta if isinstance(delta, DeltaField) else DeltaField(constant=delta)


@dataclass(frozen=True)
class ShrinkMap:
    domain: StarDomain
    radius: float

    @classmethod
    def default(cls, domain: StarDomain, variable_delta=False):
        r = domain.kappa * domain.star_radius
        return cls(domain, r / 2 if variable_delta else r)


@dataclass(frozen=True)
class ExpandMap:
    domain: StarDomain
    zeta: float

    @classmethod
    def default(cls, domain: StarDomain):
        return cls(domain, domain.kappa * domain.star_radius / 3.0)


def _radial_map(domain, x, delta, sign, check_domain=True):
    delta = _as_delta(delta)
    x = np.asarray(x)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if check_domain and not np.all(domain_contains(domain, x)):
        raise DomainError("point outside the domain")
    d = delta.value(x)
    if np.any(np.real(d) < 0) or np.any(np.real(d) > 1):
        raise ParameterError("delta(x) outside [0, 1]")
    k = domain.kappa
    rel = x - domain.star_center
    point = x + sign * k * d[:, None] * rel
    g = delta.gradient(x)
    jac = np.broadcast_to(np.eye(3), (x.shape[0], 3, 3)) + sign * k * (
        d[:, None, None] * np.eye(3) + rel[:, :, None] * g[:, None, :]
    )
    if single:
        return point[0], jac[0]
    return point, jac


def shrink_map_eval(m: ShrinkMap, x, delta):
    """``x - delta(x) kappa (x - x_c)`` and its exact Jacobian."""
    return _radial_map(m.domain, x, delta, -1.0)


def expand_map_eval(m: ExpandMap, x, delta):
    """``x + delta(x) kappa (x - x_c)`` and its exact Jacobian."""
    return _radial_map(m.domain, x, delta, +1.0)


@dataclass
class InclusionCheck:
    ok: bool
    violation: Optional[tuple] = None

    def __bool__(self):
        return self.ok


def sample_domain(d: StarDomain, n: int, rng=None) -> np.ndarray:
    """Random points of D by rejection, plus the polytope vertices."""
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = d.vertices.min(axis=0), d.vertices.max(axis=0)
    pts = [d.vertices]
    got = 0
    while got < n:
        cand = rng.uniform(lo, hi, size=(2 * n, 3))
        cand = cand[domain_contains(d, cand)][: n - got]
        pts.append(cand)
        got += len(cand)
    return np.vstack(pts)


def _sphere_directions(samples, rng):
    axes = np.vstack([np.eye(3), -np.eye(3)])
    diag = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)]) / np.sqrt(3)
    rnd = rng.normal(size=(samples, 3))
    rnd /= np.linalg.norm(rnd, axis=1, keepdims=True)
    return np.vstack([axes, diag, rnd])


def verify_inclusion(m: ShrinkMap, delta_max: float, samples: int, rng=None) -> InclusionCheck:
    """Sampled check of ``phi_delta(D) + B(0, delta r) in D`` for delta in [0, delta_max]."""
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    rng = np.random.default_rng(12345) if rng is None else rng
    d = m.domain
    xs = sample_domain(d, samples, rng)
    ys = _sphere_directions(samples, rng)
    for delta in np.linspace(0.0, delta_max, 6):
        base = xs - delta * d.kappa * (xs - d.star_center)
        pts = base[:, None, :] + delta * m.radius * ys[None, :, :]
        inside = domain_contains(d, pts.reshape(-1, 3)).reshape(len(xs), len(ys))
        if not inside.all():
            i, j = np.argwhere(~inside)[0]
            return InclusionCheck(False, (xs[i].copy(), ys[j].copy(), float(delta)))
    return InclusionCheck(True)


def segment_property_holds(m: ShrinkMap, delta: float, samples: int = 50, rng=None) -> bool:
    """``x + t (phi_delta(x) + delta r y - x)`` stays in D for t in [0, 1]."""
    rng = np.random.default_rng(7) if rng is None else rng
    d = m.domain
    xs = sample_domain(d, samples, rng)
    ys = rng.uniform(-1, 1, size=(samples, 3))
    ys = ys[np.linalg.norm(ys, axis=1) < 1]
    target = (xs - delta * d.kappa * (xs - d.star_center))[:, None, :] + delta * m.radius * ys[None]
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        pts = xs[:, None, :] + t * (target - xs[:, None, :])
        if not domain_contains(d, pts.reshape(-1, 3)).all():
            return False
    return True


def validate_halfspaces(rows: Sequence[Sequence[float]]):
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ConfigurationError("halfspaces must be rows of (nx, ny, nz, b)")
    return arr
