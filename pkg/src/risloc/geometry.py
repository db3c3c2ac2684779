"""RIS coordinate frames, element grid, and AOD/distance parameterization.

Positions are plain ``numpy`` arrays of shape ``(3,)`` in meters (global frame).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-12


class GeometryError(ValueError):
    """Raised for degenerate or invalid geometric inputs."""


def as_position(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(3)
    if not np.all(np.isfinite(p)):
        raise GeometryError(f"position has non-finite components: {p}")
    return p


def check_orientation(R) -> np.ndarray:
    """Validate a rotation matrix and return it as a float array."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise GeometryError(f"orientation must be 3x3, got {R.shape}")
    if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL:
        raise GeometryError("orientation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
        raise GeometryError("orientation is not a proper rotation (det != +1)")
    return R


def default_orientation() -> np.ndarray:
    # local x -> global x, local y -> global z, surface normal -> global -y
    return np.array([[1.0, 0.0, 0.0],
                     [0.0, 0.0, -1.0],
                     [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class Aod2D:
    """Elevation ``theta`` from local +z in [0, pi], azimuth ``phi`` in (-pi, pi]."""

    theta: float
    phi: float

    def __post_init__(self):
        if not (0.0 <= self.theta <= np.pi):
            raise GeometryError(f"theta out of [0, pi]: {self.theta}")
        if not (-np.pi < self.phi <= np.pi):
            raise GeometryError(f"phi out of (-pi, pi]: {self.phi}")


@dataclass(frozen=True)
class LocalSpherical:
    aod: Aod2D
    distance: float

    def __post_init__(self):
        if not self.distance > 0:
            raise GeometryError(f"distance must be positive: {self.distance}")


@dataclass(frozen=True)
class RisGeometry:
    """Planar ``m1 x m2`` RIS centred at ``center`` with rotation ``orientation``.

    Elements are indexed row-major from the top-left corner: element
    ``n = i * m2 + j`` sits at local ``((j - (m2-1)/2) * spacing,
    ((m1-1)/2 - i) * spacing, 0)``.
    """

    m1: int
    m2: int
    spacing: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=default_orientation)

    def __post_init__(self):
        if self.m1 < 1 or self.m2 < 1:
            raise GeometryError("RIS must have at least one row and column")
        if not self.spacing > 0:
            raise GeometryError("element spacing must be positive")
        object.__setattr__(self, "center", as_position(self.center))
        object.__setattr__(self, "orientation", check_orientation(self.orientation))

    @property
    def num_elements(self) -> int:
        return self.m1 * self.m2

    @property
    def aperture(self) -> float:
        """Diagonal extent between the outermost element centres."""
        return self.spacing * np.hypot(self.m1 - 1, self.m2 - 1)

    def fraunhofer_distance(self, wavelength: float) -> float:
        return 2.0 * self.aperture ** 2 / wavelength

    def fresnel_distance(self, wavelength: float) -> float:
        return 0.62 * np.sqrt(self.aperture ** 3 / wavelength)

    def local_element_positions(self) -> np.ndarray:
        i, j = np.divmod(np.arange(self.num_elements), self.m2)
        x = (j - (self.m2 - 1) / 2) * self.spacing
        y = ((self.m1 - 1) / 2 - i) * self.spacing
        return np.column_stack([x, y, np.zeros_like(x)])

    def to_local(self, p) -> np.ndarray:
        return self.orientation.T @ (np.asarray(p, dtype=float) - self.center)

    def to_global(self, p_local) -> np.ndarray:
        return self.orientation @ np.asarray(p_local, dtype=float) + self.center

    def translated(self, offset) -> "RisGeometry":
        return RisGeometry(self.m1, self.m2, self.spacing,
                           self.center + as_position(offset), self.orientation)


def element_positions(geom: RisGeometry) -> np.ndarray:
    """Global element positions, shape ``(M_r, 3)``."""
    return geom.local_element_positions() @ geom.orientation.T + geom.center


def unit_vector(aod: Aod2D) -> np.ndarray:
    st = np.sin(aod.theta)
    return np.array([st * np.cos(aod.phi), st * np.sin(aod.phi), np.cos(aod.theta)])


def unit_vector_grid(theta, phi) -> np.ndarray:
    """Vectorized :func:`unit_vector` for arrays of angles; returns ``(..., 3)``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def wrap_angles(theta: float, phi: float) -> tuple[float, float]:
    """Map an unconstrained angle pair onto the canonical ``Aod2D`` ranges.

    The pair describes the same unit vector before and after wrapping.
    """
    u = unit_vector_grid(theta, phi)
    theta_c = float(np.arccos(np.clip(u[2], -1.0, 1.0)))
    if np.hypot(u[0], u[1]) == 0.0:
        return theta_c, 0.0
    phi_c = float(np.arctan2(u[1], u[0]))
    if phi_c == -np.pi:
        phi_c = np.pi
    return theta_c, phi_c


def aod_from_position(p, geom: RisGeometry) -> LocalSpherical:
    p_loc = geom.to_local(as_position(p))
    d = float(np.linalg.norm(p_loc))
    if d == 0.0:
        raise GeometryError("position coincides with the RIS centre")
    theta = float(np.arccos(np.clip(p_loc[2] / d, -1.0, 1.0)))
    if p_loc[0] == 0.0 and p_loc[1] == 0.0:
        phi = 0.0
    else:
        phi = float(np.arctan2(p_loc[1], p_loc[0]))
        if phi == -np.pi:
            phi = np.pi
    return LocalSpherical(Aod2D(theta, phi), d)


def position_from_spherical(ls: LocalSpherical, geom: RisGeometry) -> np.ndarray:
    return geom.to_global(ls.distance * unit_vector(ls.aod))
