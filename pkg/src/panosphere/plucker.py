"""Per-pixel ray embeddings for camera routes.

Each frame of a route is a 6-DoF pose; every pixel gets the oriented ray
through it, stored as the pair (moment, direction) with
``moment = origin x direction`` and a unit-length direction.  The moment is
orthogonal to the direction by construction and does not change when the
origin slides along the ray, which makes the pair a well-defined line
embedding.

Two ray models are provided: an equirectangular model covering the full
sphere (default for panoramic frames) and a pinhole model for cropped
perspective views.  Fields are stored frame-major as T x H x W x 6 with the
moment in channels 0..2 and the direction in channels 3..5.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import ErpGrid, EulerAngles, rotation_matrix, TWO_PI, HALF_PI

FIELD_MAGIC = b"PLKF"
FIELD_VERSION = 1


@dataclass(frozen=True)
class CameraPose:
    """World position in meters plus yaw/pitch/roll orientation."""

    position: tuple[float, float, float]
    orientation: EulerAngles = EulerAngles()

    def __post_init__(self) -> None:
        pos = tuple(float(c) for c in self.position)
        if len(pos) != 3 or not all(math.isfinite(c) for c in pos):
            raise ValueError(f"position must be 3 finite components, got {pos!r}")
        object.__setattr__(self, "position", pos)

    @property
    def translation(self) -> np.ndarray:
        return np.array(self.position)


@dataclass(frozen=True)
class PinholeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(
                f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}"
            )


class PluckerField:
    """T x H x W x 6 array of (moment, direction) per pixel."""

    __slots__ = ("data",)

    def __init__(self, data) -> None:
        arr = np.asarray(data)
        if arr.ndim != 4 or arr.shape[3] != 6:
            raise ValueError(f"field must be T x H x W x 6, got shape {arr.shape}")
        self.data = arr

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def moments(self) -> np.ndarray:
        return self.data[..., :3]

    @property
    def directions(self) -> np.ndarray:
        return self.data[..., 3:]

    def max_moment_dot(self) -> float:
        """Largest |moment . direction| over all pixels, evaluated in float64."""
        dots = np.einsum(
            "thwc,thwc->thw",
            self.moments.astype(np.float64),
            self.directions.astype(np.float64),
        )
        return float(np.max(np.abs(dots)))

    def validate(self, tol: float | None = None) -> None:
        """Check moment orthogonality and unit directions.

        The default tolerance is 1e-9 for float64 data; fields round-tripped
        through float32 storage carry rounding of that precision, so a
        float32-scaled tolerance is used for them.
        """
        if tol is None:
            tol = 1e-9 if self.data.dtype == np.float64 else 1e-5
        worst = self.max_moment_dot()
        if worst > tol * max(1.0, float(np.max(np.abs(self.moments), initial=0.0))):
            raise ValueError(f"moment not orthogonal to direction: |m.d| = {worst}")
        norms = np.linalg.norm(self.directions.astype(np.float64), axis=-1)
        err = float(np.max(np.abs(norms - 1.0)))
        if err > tol:
            raise ValueError(f"direction norms deviate from 1 by {err}")

    def __eq__(self, other) -> bool:
        return isinstance(other, PluckerField) and np.array_equal(
            self.data, other.data
        )


def ray_moment(origin, direction) -> np.ndarray:
    """Moment of the ray through ``origin`` with the given direction."""
    return np.cross(np.asarray(origin, dtype=np.float64), np.asarray(direction, dtype=np.float64))


def pixel_ray_erp(u: float, v: float, grid: ErpGrid, pose: CameraPose) -> np.ndarray:
    """Unit world-space direction of an ERP pixel under the pose's orientation."""
    from .geometry import erp_to_sphere, sphere_to_unit_vector

    d = sphere_to_unit_vector(erp_to_sphere((u, v), grid))
    return rotation_matrix(pose.orientation).matrix @ d


def pixel_ray_pinhole(
    u: float,
    v: float,
    intrinsics: PinholeIntrinsics,
    pose: CameraPose,
    add_translation: bool = False,
) -> np.ndarray:
    """Unit world-space direction of a pinhole pixel (+z is the camera axis).

    ``add_translation`` additionally adds the camera position to the ray
    before normalization; this variant is dimensionally odd (position enters
    a direction) but is kept selectable for conditioning experiments.  With a
    camera at the origin both modes agree.
    """
    d_cam = np.array(
        [
            (u - intrinsics.cx) / intrinsics.fx,
            (v - intrinsics.cy) / intrinsics.fy,
            1.0,
        ]
    )
    d = rotation_matrix(pose.orientation).matrix @ d_cam
    if add_translation:
        d = d + pose.translation
    norm = float(np.linalg.norm(d))
    if norm < 1e-12:
        raise ValueError("degenerate ray direction")
    return d / norm


def _erp_direction_grid(grid: ErpGrid) -> np.ndarray:
    """Unit vectors of all pixel centers, shape H x W x 3."""
    u = (np.arange(grid.width) + 0.5) / grid.width
    v = (np.arange(grid.height) + 0.5) / grid.height
    theta = TWO_PI * u - math.pi
    phi = math.pi * v - HALF_PI
    cp = np.cos(phi)[:, None]
    out = np.empty((grid.height, grid.width, 3))
    out[..., 0] = cp * np.cos(theta)[None, :]
    out[..., 1] = cp * np.sin(theta)[None, :]
    out[..., 2] = np.sin(phi)[:, None]
    return out


def _pinhole_direction_grid(width: int, height: int, intrinsics: PinholeIntrinsics) -> np.ndarray:
    u = np.arange(width) + 0.5
    v = np.arange(height) + 0.5
    out = np.empty((height, width, 3))
    out[..., 0] = ((u - intrinsics.cx) / intrinsics.fx)[None, :]
    out[..., 1] = ((v - intrinsics.cy) / intrinsics.fy)[:, None]
    out[..., 2] = 1.0
    return out


def build_plucker_field(
    route,
    grid: ErpGrid,
    model: str = "erp",
    intrinsics: PinholeIntrinsics | None = None,
    add_translation: bool = False,
) -> PluckerField:
    """Embed every frame of a route as a per-pixel (moment, direction) field.

    Pixels are sampled at their centers.  ``model`` selects the ray model:
    ``"erp"`` (full panorama, default) or ``"pinhole"`` (requires
    ``intrinsics``).
    """
    route = list(route)
    if not route:
        raise ValueError("route is empty")
    if model == "erp":
        base = _erp_direction_grid(grid)
    elif model == "pinhole":
        if intrinsics is None:
            raise ValueError("pinhole model requires intrinsics")
        base = _pinhole_direction_grid(grid.width, grid.height, intrinsics)
    else:
        raise ValueError(f"unknown ray model {model!r}; valid models: erp, pinhole")

    data = np.empty((len(route), grid.height, grid.width, 6))
    for t, pose in enumerate(route):
        rot = rotation_matrix(pose.orientation).matrix
        d = base @ rot.T
        if model == "pinhole":
            if add_translation:
                d = d + pose.translation
            d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        data[t, ..., :3] = ray_moment(pose.translation, d)
        data[t, ..., 3:] = d

    fld = PluckerField(data)
    fld.validate()
    return fld


def downsample_field(
    field: PluckerField, factor_t: int, factor_h: int, factor_w: int
) -> PluckerField:
    """Block-average pooling; pooled directions are re-normalized.

    Factors must divide the field dimensions exactly.  Because all rays of a
    frame share one origin, the pooled moment stays orthogonal to the pooled
    direction.  Raises if a pooled direction cancels to (near) zero.
    """
    t, h, w = field.frames, field.height, field.width
    for dim, f, name in ((t, factor_t, "frames"), (h, factor_h, "height"), (w, factor_w, "width")):
        if f < 1 or dim % f != 0:
            raise ValueError(f"factor {f} does not divide {name} {dim}")
    if factor_t == factor_h == factor_w == 1:
        return PluckerField(field.data.copy())
    blocks = field.data.reshape(
        t // factor_t, factor_t, h // factor_h, factor_h, w // factor_w, factor_w, 6
    )
    pooled = blocks.mean(axis=(1, 3, 5))
    d = pooled[..., 3:]
    norms = np.linalg.norm(d, axis=-1, keepdims=True)
    if float(norms.min()) < 1e-12:
        raise ValueError("pooled directions cancelled; choose smaller factors")
    pooled[..., 3:] = d / norms
    return PluckerField(pooled)


def write_field(field: PluckerField, path) -> None:
    """Serialize to the "PLKF" binary layout (float32 little-endian payload)."""
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<H", FIELD_VERSION))
        fh.write(
            struct.pack("<III", field.frames, field.height, field.width)
        )
        fh.write(np.ascontiguousarray(field.data, dtype="<f4").tobytes())


def read_field(path) -> PluckerField:
    """Read a "PLKF" file; the payload is float32, widened to float64 in memory."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FIELD_MAGIC:
            raise ValueError(f"bad field magic {magic!r}")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != FIELD_VERSION:
            raise ValueError(f"unsupported field version {version}")
        t, h, w = struct.unpack("<III", fh.read(12))
        raw = fh.read(t * h * w * 6 * 4)
        if len(raw) != t * h * w * 6 * 4:
            raise ValueError("truncated field data")
    data = np.frombuffer(raw, dtype="<f4").reshape(t, h, w, 6).astype(np.float64)
    return PluckerField(data)


__all__ = [
    "CameraPose",
    "PinholeIntrinsics",
    "PluckerField",
    "ray_moment",
    "pixel_ray_erp",
    "pixel_ray_pinhole",
    "build_plucker_field",
    "downsample_field",
    "write_field",
    "read_field",
]
