"""Equirectangular-to-sphere geometry.

Converts pixel coordinates on an equirectangular (ERP) grid to points on the
unit sphere, measures great-circle distances between them, and compensates
cross-frame distances for per-frame camera rotation.  All angles are radians,
all math is double precision, and the sphere radius is fixed at 1 so that
distances are central angles in [0, pi].

Conventions used throughout the package:

* longitude ``theta`` lies in [-pi, pi), latitude ``phi`` in [-pi/2, pi/2];
* the unit vector of (theta, phi) is
  ``(cos(phi)*cos(theta), cos(phi)*sin(theta), sin(phi))``;
* Euler angles (alpha, beta, gamma) = (yaw, pitch, roll) compose as
  ``Rz(alpha) @ Ry(beta) @ Rx(gamma)`` acting on world-frame column vectors.

Everything here is a pure function of its inputs and safe to call from any
number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi

_IDENTITY3 = np.eye(3)


@dataclass(frozen=True)
class ErpGrid:
    """Pixel dimensions of an equirectangular image (width spans longitude)."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if not (isinstance(self.width, int) and isinstance(self.height, int)):
            raise TypeError("grid dimensions must be integers")
        if self.width < 2 or self.width % 2 != 0:
            raise ValueError(f"width must be an even count >= 2, got {self.width}")
        if self.height < 2:
            raise ValueError(f"height must be >= 2, got {self.height}")


@dataclass(frozen=True)
class SphericalPoint:
    """Longitude/latitude pair on the unit sphere.

    ``theta`` is wrapped into [-pi, pi) on construction (values already in
    range pass through unchanged); ``phi`` is clamped to [-pi/2, pi/2].
    """

    theta: float
    phi: float

    def __post_init__(self) -> None:
        t = float(self.theta)
        p = float(self.phi)
        if not (math.isfinite(t) and math.isfinite(p)):
            raise ValueError(f"coordinates must be finite, got ({t}, {p})")
        t = math.remainder(t, TWO_PI)
        if t >= math.pi:  # remainder() yields [-pi, pi]; fold +pi to -pi
            t -= TWO_PI
        if p < -HALF_PI:
            p = -HALF_PI
        elif p > HALF_PI:
            p = HALF_PI
        object.__setattr__(self, "theta", t)
        object.__setattr__(self, "phi", p)


@dataclass(frozen=True)
class EulerAngles:
    """Yaw (about z), pitch (about y), roll (about x), in radians."""

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, v)


class Rotation3:
    """A proper rotation: 3x3 orthonormal matrix with determinant +1.

    Orthonormality and determinant are checked to 1e-9 on construction; the
    stored matrix is a read-only float64 copy.
    """

    __slots__ = ("matrix",)

    def __init__(self, matrix) -> None:
        m = np.array(matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("rotation matrix must be finite")
        if np.max(np.abs(m.T @ m - _IDENTITY3)) > 1e-9:
            raise ValueError("matrix is not orthonormal within 1e-9")
        if abs(np.linalg.det(m) - 1.0) > 1e-9:
            raise ValueError("matrix determinant differs from +1 by more than 1e-9")
        m.setflags(write=False)
        self.matrix = m

    @property
    def is_identity(self) -> bool:
        """True only for the bitwise-exact identity matrix."""
        return bool(np.array_equal(self.matrix, _IDENTITY3))

    def __repr__(self) -> str:
        return f"Rotation3({self.matrix.tolist()!r})"


def erp_to_sphere(pixel: tuple[float, float], grid: ErpGrid) -> SphericalPoint:
    """Map a real-valued pixel coordinate to spherical coordinates.

    ``theta = 2*pi*x/W - pi`` and ``phi = pi*y/H - pi/2``.  ``x`` must lie in
    [0, W) and ``y`` in [0, H]; real values are accepted so both pixel corners
    and pixel centers can be sampled.
    """
    x, y = float(pixel[0]), float(pixel[1])
    w, h = grid.width, grid.height
    if not (0.0 <= x < w):
        raise ValueError(f"pixel x={x} outside [0, {w})")
    if not (0.0 <= y <= h):
        raise ValueError(f"pixel y={y} outside [0, {h}]")
    return SphericalPoint(TWO_PI * (x / w) - math.pi, math.pi * (y / h) - HALF_PI)


def sphere_to_unit_vector(p: SphericalPoint) -> np.ndarray:
    """Unit 3-vector of a spherical point (x toward theta=0, z toward the north pole)."""
    cp = math.cos(p.phi)
    return np.array(
        [cp * math.cos(p.theta), cp * math.sin(p.theta), math.sin(p.phi)]
    )


def haversine_distance(p1: SphericalPoint, p2: SphericalPoint) -> float:
    """Great-circle distance (central angle in [0, pi]) between two points.

    The half-angle form is numerically stable near zero separation; the arcsin
    argument is clamped against rounding so the formula is total.
    """
    sp = math.sin(0.5 * (p2.phi - p1.phi))
    st = math.sin(0.5 * (p2.theta - p1.theta))
    h = sp * sp + (math.cos(p1.phi) * math.cos(p2.phi)) * (st * st)
    if h < 0.0:
        h = 0.0
    elif h > 1.0:
        h = 1.0
    return 2.0 * math.asin(math.sqrt(h))


def haversine_distances(theta1, phi1, theta2, phi2) -> np.ndarray:
    """Vectorized :func:`haversine_distance` over broadcastable angle arrays.

    Uses the same expression order as the scalar form so both paths agree on
    identical inputs.
    """
    sp = np.sin(0.5 * (np.asarray(phi2) - np.asarray(phi1)))
    st = np.sin(0.5 * (np.asarray(theta2) - np.asarray(theta1)))
    h = sp * sp + (np.cos(phi1) * np.cos(phi2)) * (st * st)
    np.clip(h, 0.0, 1.0, out=h)
    return 2.0 * np.arcsin(np.sqrt(h))


def rotation_matrix(e: EulerAngles) -> Rotation3:
    """Rotation ``Rz(alpha) @ Ry(beta) @ Rx(gamma)`` for extrinsic x-y-z order."""
    ca, sa = math.cos(e.alpha), math.sin(e.alpha)
    cb, sb = math.cos(e.beta), math.sin(e.beta)
    cg, sg = math.cos(e.gamma), math.sin(e.gamma)
    rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cg, -sg], [0.0, sg, cg]])
    return Rotation3(rz @ ry @ rx)


def rotate_point(p: SphericalPoint, rotation: Rotation3) -> SphericalPoint:
    """Rotate a spherical point; the exact identity matrix returns ``p`` unchanged.

    At the poles longitude is undefined; the result's theta is fixed to 0
    there for determinism.
    """
    if rotation.is_identity:
        return p
    w = rotation.matrix @ sphere_to_unit_vector(p)
    z = w[2]
    if z < -1.0:
        z = -1.0
    elif z > 1.0:
        z = 1.0
    if abs(z) >= 1.0:
        return SphericalPoint(0.0, math.copysign(HALF_PI, z))
    return SphericalPoint(math.atan2(w[1], w[0]), math.asin(z))


def temporal_distance(
    p1: SphericalPoint,
    e1: EulerAngles,
    p2: SphericalPoint,
    e2: EulerAngles,
) -> float:
    """Cross-frame spherical distance between two points.

    Each point is first rotated by its frame's orientation relative to the
    reference frame, then the great-circle distance is taken.  With
    ``e1 == EulerAngles(0, 0, 0)`` this reduces to rotating only the second
    point; with both orientations zero it equals :func:`haversine_distance`
    exactly.  Symmetric in its two (point, angles) arguments.
    """
    q1 = rotate_point(p1, rotation_matrix(e1))
    q2 = rotate_point(p2, rotation_matrix(e2))
    return haversine_distance(q1, q2)
