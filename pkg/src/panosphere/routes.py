"""Exploration-route sampling over synthetic walkable scenes.

Pipeline: triangulate the walkable points (Bowyer-Watson), pick random vertex
pairs, run Dijkstra over the triangulation edges, relax the path with
Laplacian smoothing, resample it to a fixed physical stride, filter by length
and by collision against axis-aligned obstacle boxes.  Everything is
deterministic given the seed; the random stream is a documented SplitMix64
sequence so routes reproduce across implementations.
"""

from __future__ import annotations

import heapq
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import EulerAngles
from .plucker import CameraPose

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 generator; the exact stream is part of the route contract.

    ``next_u64`` advances the state by the golden-gamma increment and applies
    the standard finalizer.  ``below(n)`` reduces one draw modulo n.
    """

    _GAMMA = 0x9E3779B97F4A7C15

    def __init__(self, seed: int) -> None:
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + self._GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        return self.next_u64() % n


def derive_stream(seed: int, index: int) -> int:
    """Seed of the index-th derived stream (one per sampling attempt)."""
    z = (seed ^ ((index + 1) * 0xD1342543DE82EF95)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box in meters; touching its surface counts as inside."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self) -> None:
        lo = tuple(float(c) for c in self.min_corner)
        hi = tuple(float(c) for c in self.max_corner)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("box corners must have 3 components")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ValueError(f"box min {lo} must be strictly below max {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)


@dataclass
class WalkableScene:
    points: list[tuple[float, float]]
    obstacles: list[Box] = field(default_factory=list)
    ground_z: float = 0.0
    camera_height: float = 1.6

    def __post_init__(self) -> None:
        pts = [(float(x), float(y)) for x, y in self.points]
        if len(pts) < 3:
            raise ValueError("scene needs at least 3 walkable points")
        if not all(math.isfinite(c) for p in pts for c in p):
            raise ValueError("scene points must be finite")
        if _all_collinear(np.asarray(pts)):
            raise ValueError("scene points are all collinear")
        self.points = pts


def _all_collinear(pts: np.ndarray) -> bool:
    p0 = pts[0]
    rel = pts - p0
    base = None
    scale = max(1.0, float(np.max(np.abs(rel))))
    for r in rel[1:]:
        if abs(r[0]) > 1e-12 * scale or abs(r[1]) > 1e-12 * scale:
            base = r
            break
    if base is None:
        return True
    cross = rel[:, 0] * base[1] - rel[:, 1] * base[0]
    return bool(np.max(np.abs(cross)) <= 1e-12 * scale * scale)


class Polyline:
    """Ordered 2D points (meters); at least two, consecutive points distinct."""

    __slots__ = ("points",)

    def __init__(self, points) -> None:
        pts = np.array(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError(f"polyline needs shape (k>=2, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("polyline points must be finite")
        if np.any(np.all(pts[1:] == pts[:-1], axis=1)):
            raise ValueError("consecutive polyline points must be distinct")
        pts.setflags(write=False)
        self.points = pts

    def arc_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class NavMesh:
    """Triangulated walkable surface: vertices, triangle index triples, weighted edges."""

    vertices: np.ndarray
    triangles: tuple[tuple[int, int, int], ...]
    edges: tuple[tuple[int, int, float], ...]

    def adjacency(self) -> dict[int, list[tuple[int, float]]]:
        adj: dict[int, list[tuple[int, float]]] = {
            i: [] for i in range(len(self.vertices))
        }
        for a, b, w in self.edges:
            adj[a].append((b, w))
            adj[b].append((a, w))
        for lst in adj.values():
            lst.sort()
        return adj


@dataclass(frozen=True)
class Collision:
    segment_index: int
    obstacle_index: int


@dataclass(frozen=True)
class SampleStats:
    attempts: int
    rejections: dict[str, int]


class NoPathError(ValueError):
    pass


class RouteSamplingError(RuntimeError):
    def __init__(self, message: str, stats: SampleStats) -> None:
        super().__init__(message)
        self.stats = stats


@dataclass
class ExplorationRoute:
    """Per-frame camera poses with a fixed physical stride between frames."""

    frames: list[CameraPose]
    stride: float = 0.10

    def __post_init__(self) -> None:
        if not self.frames:
            raise ValueError("route has no frames")
        pos = np.array([f.position for f in self.frames])
        if pos.shape[0] > 1:
            gaps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
            err = float(np.max(np.abs(gaps - self.stride)))
            if err > 1e-6:
                raise ValueError(
                    f"consecutive pose spacing deviates from stride by {err:.3e} m"
                )

    @property
    def length(self) -> float:
        return (len(self.frames) - 1) * self.stride

    def positions(self) -> np.ndarray:
        return np.array([f.position for f in self.frames])


# ---------------------------------------------------------------------------
# Delaunay triangulation (Bowyer-Watson with a finite super-triangle)
# ---------------------------------------------------------------------------


def _orient(pa, pb, pc) -> float:
    return (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])


def _incircle(pa, pb, pc, pp) -> tuple[float, float]:
    """Signed in-circle determinant and its magnitude estimate.

    Positive for pp strictly inside the circumcircle of CCW triangle
    (pa, pb, pc).
    """
    adx, ady = pa[0] - pp[0], pa[1] - pp[1]
    bdx, bdy = pb[0] - pp[0], pb[1] - pp[1]
    cdx, cdy = pc[0] - pp[0], pc[1] - pp[1]
    ad2 = adx * adx + ady * ady
    bd2 = bdx * bdx + bdy * bdy
    cd2 = cdx * cdx + cdy * cdy
    det = (
        adx * (bdy * cd2 - bd2 * cdy)
        - ady * (bdx * cd2 - bd2 * cdx)
        + ad2 * (bdx * cdy - bdy * cdx)
    )
    mag = (
        abs(adx) * (abs(bdy * cd2) + abs(bd2 * cdy))
        + abs(ady) * (abs(bdx * cd2) + abs(bd2 * cdx))
        + abs(ad2) * (abs(bdx * cdy) + abs(bdy * cdx))
    )
    return det, mag


_INCIRCLE_REL_TOL = 1e-12


def _strictly_inside(pa, pb, pc, pp) -> bool:
    det, mag = _incircle(pa, pb, pc, pp)
    return det > _INCIRCLE_REL_TOL * mag


def _ccw(tri: tuple[int, int, int], coords) -> tuple[int, int, int]:
    a, b, c = tri
    s = _orient(coords[a], coords[b], coords[c])
    if s == 0.0:
        raise RuntimeError("degenerate triangle produced during triangulation")
    return (a, b, c) if s > 0 else (a, c, b)


def _canonicalize_cocircular(triangles: list[tuple[int, int, int]], coords) -> list:
    """Resolve cocircular diagonals deterministically.

    A quad whose four corners are concyclic admits two valid diagonals; keep
    the one whose lower endpoint index is smaller.  Each flip strictly lowers
    that index, so the pass terminates.
    """
    tris = [_ccw(t, coords) for t in triangles]
    while True:
        edge_map: dict[tuple[int, int], list[int]] = {}
        for ti, (a, b, c) in enumerate(tris):
            for u, v in ((a, b), (b, c), (c, a)):
                edge_map.setdefault((min(u, v), max(u, v)), []).append(ti)
        flipped = False
        for edge in sorted(edge_map):
            owners = edge_map[edge]
            if len(owners) != 2:
                continue
            t1, t2 = owners
            u, v = edge
            x = next(i for i in tris[t1] if i not in edge)
            y = next(i for i in tris[t2] if i not in edge)
            det, mag = _incircle(*(coords[i] for i in tris[t1]), coords[y])
            if abs(det) > _INCIRCLE_REL_TOL * mag:
                continue
            if min(x, y) < min(u, v):
                tris[t1] = _ccw((x, y, u), coords)
                tris[t2] = _ccw((x, y, v), coords)
                flipped = True
                break
        if not flipped:
            return tris


def delaunay_triangulate(points) -> NavMesh:
    """Delaunay triangulation of 2D points via incremental insertion.

    Exact duplicates are dropped with a warning; an all-collinear input is an
    error.  Cocircular ties (grid scenes) are broken deterministically, so
    the same input always yields the same mesh.
    """
    seen: dict[tuple[float, float], int] = {}
    coords: list[tuple[float, float]] = []
    dropped = 0
    for x, y in points:
        key = (float(x), float(y))
        if key in seen:
            dropped += 1
            continue
        seen[key] = len(coords)
        coords.append(key)
    if dropped:
        warnings.warn(f"deduplicated {dropped} duplicate point(s)", stacklevel=2)
    if len(coords) < 3:
        raise ValueError("need at least 3 distinct points")
    arr = np.asarray(coords)
    if _all_collinear(arr):
        raise ValueError("points are all collinear")

    n = len(coords)
    cx, cy = arr.mean(axis=0)
    span = float(max(np.ptp(arr[:, 0]), np.ptp(arr[:, 1]), 1.0))
    big = 64.0 * span
    all_pts = coords + [
        (cx - 1.5 * big, cy - big),
        (cx + 1.5 * big, cy - big),
        (cx, cy + 1.5 * big),
    ]
    tris: list[tuple[int, int, int]] = [_ccw((n, n + 1, n + 2), all_pts)]

    for p in range(n):
        pp = all_pts[p]
        bad = [t for t in tris if _strictly_inside(*(all_pts[i] for i in t), pp)]
        boundary: dict[tuple[int, int], tuple[int, int]] = {}
        for a, b, c in bad:
            for u, v in ((a, b), (b, c), (c, a)):
                key = (min(u, v), max(u, v))
                if key in boundary:
                    del boundary[key]
                else:
                    boundary[key] = (u, v)
        bad_set = set(bad)
        tris = [t for t in tris if t not in bad_set]
        for u, v in boundary.values():
            tris.append(_ccw((u, v, p), all_pts))

    tris = [t for t in tris if max(t) < n]
    tris = _canonicalize_cocircular(tris, all_pts)

    triangles = tuple(sorted(tuple(sorted(t)) for t in tris))
    edge_set = set()
    for a, b, c in triangles:
        edge_set.update([(a, b), (b, c), (a, c)])
    edges = tuple(
        (a, b, float(np.hypot(arr[b, 0] - arr[a, 0], arr[b, 1] - arr[a, 1])))
        for a, b in sorted(edge_set)
    )
    verts = arr.copy()
    verts.setflags(write=False)
    return NavMesh(vertices=verts, triangles=triangles, edges=edges)


# ---------------------------------------------------------------------------
# Path operations
# ---------------------------------------------------------------------------


def shortest_path(mesh: NavMesh, a: int, b: int) -> Polyline:
    """Minimum-length vertex path along mesh edges (Dijkstra).

    Distance ties prefer the smaller predecessor index, so the result is
    deterministic.
    """
    nv = len(mesh.vertices)
    if not (0 <= a < nv and 0 <= b < nv):
        raise IndexError(f"vertex index out of range: a={a}, b={b}, n={nv}")
    if a == b:
        raise ValueError("endpoints must differ")
    adj = mesh.adjacency()
    dist: dict[int, float] = {a: 0.0}
    pred: dict[int, int] = {}
    done: set[int] = set()
    heap: list[tuple[float, int]] = [(0.0, a)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == b:
            break
        for v, w in adj[u]:
            if v in done:
                continue
            nd = d + w
            if v not in dist or nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
            elif nd == dist[v] and u < pred.get(v, nv):
                pred[v] = u
    if b not in done:
        raise NoPathError(f"no path between vertices {a} and {b}")
    order = [b]
    while order[-1] != a:
        order.append(pred[order[-1]])
    order.reverse()
    return Polyline(mesh.vertices[order])


def laplacian_smooth(path: Polyline, lam: float = 0.5, iterations: int = 10) -> Polyline:
    """Pull interior points toward their neighbor midpoints; endpoints stay fixed.

    One iteration moves every interior point simultaneously by
    ``lam * ((prev + next)/2 - p)``.  For lam in (0, 1] the turning energy
    (sum of squared second differences) never increases.
    """
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"lam must be in (0, 1], got {lam}")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if len(path) < 3:
        return path
    pts = path.points.copy()
    for _ in range(iterations):
        mid = 0.5 * (pts[:-2] + pts[2:])
        pts[1:-1] += lam * (mid - pts[1:-1])
    return Polyline(pts)


def turning_energy(path: Polyline) -> float:
    second = path.points[2:] - 2.0 * path.points[1:-1] + path.points[:-2]
    return float(np.sum(second * second))


def _segment_hits_box(p, q, box: Box) -> bool:
    # slab method over the closed box; grazing a face counts as a hit
    tmin, tmax = 0.0, 1.0
    for ax in range(3):
        d = q[ax] - p[ax]
        lo, hi = box.min_corner[ax], box.max_corner[ax]
        if d == 0.0:
            if p[ax] < lo or p[ax] > hi:
                return False
        else:
            t1 = (lo - p[ax]) / d
            t2 = (hi - p[ax]) / d
            if t1 > t2:
                t1, t2 = t2, t1
            tmin = max(tmin, t1)
            tmax = min(tmax, t2)
            if tmin > tmax:
                return False
    return True


def collision_check(path: Polyline, scene: WalkableScene) -> Collision | None:
    """First path segment (at camera height) that intersects an obstacle box."""
    z = scene.ground_z + scene.camera_height
    pts = path.points
    for si in range(pts.shape[0] - 1):
        p = (pts[si, 0], pts[si, 1], z)
        q = (pts[si + 1, 0], pts[si + 1, 1], z)
        for oi, box in enumerate(scene.obstacles):
            if _segment_hits_box(p, q, box):
                return Collision(si, oi)
    return None


def normalize_route(
    path: Polyline,
    stride: float = 0.10,
    heading: str = "tangent",
    fixed_orientation: EulerAngles | None = None,
    ground_z: float = 0.0,
    camera_height: float = 1.6,
) -> ExplorationRoute:
    """Resample a path so consecutive frames are exactly one stride apart.

    Steps by Euclidean distance: each frame is the first point along the
    remaining polyline at exactly ``stride`` meters from the previous frame,
    so the spacing invariant holds even across corners.  A final sub-stride
    tail is dropped.  Positions are lifted to camera height; yaw follows the
    direction of motion (``heading="tangent"``, pitch = roll = 0) or is fixed.
    """
    if stride <= 0.0:
        raise ValueError(f"stride must be positive, got {stride}")
    if heading not in ("tangent", "fixed"):
        raise ValueError(f"heading must be 'tangent' or 'fixed', got {heading!r}")
    pts = path.points
    samples = [pts[0]]
    cur = pts[0]
    seg, t_cur = 0, 0.0
    r2 = stride * stride
    while True:
        placed = False
        s_i, t_floor = seg, t_cur
        while s_i < pts.shape[0] - 1:
            a, b = pts[s_i], pts[s_i + 1]
            ab = b - a
            c2 = float(ab @ ab)
            rel = a - cur
            c1 = 2.0 * float(rel @ ab)
            c0 = float(rel @ rel) - r2
            disc = c1 * c1 - 4.0 * c2 * c0
            if disc >= 0.0:
                t_hit = (-c1 + math.sqrt(disc)) / (2.0 * c2)
                if t_floor < t_hit <= 1.0 + 1e-9:
                    t_hit = min(t_hit, 1.0)
                    cur = a + t_hit * ab
                    samples.append(cur)
                    seg, t_cur = s_i, t_hit
                    placed = True
                    break
            s_i += 1
            t_floor = 0.0
        if not placed:
            break
    if len(samples) < 2:
        raise ValueError("path is shorter than one stride")

    xy = np.asarray(samples)
    z = ground_z + camera_height
    if heading == "fixed":
        orient = fixed_orientation if fixed_orientation is not None else EulerAngles()
        orients = [orient] * len(samples)
    else:
        yaws = [
            math.atan2(xy[i + 1, 1] - xy[i, 1], xy[i + 1, 0] - xy[i, 0])
            for i in range(len(samples) - 1)
        ]
        yaws.append(yaws[-1])
        orients = [EulerAngles(alpha=yaw) for yaw in yaws]
    frames = [
        CameraPose((float(x), float(y), z), o)
        for (x, y), o in zip(xy, orients)
    ]
    return ExplorationRoute(frames=frames, stride=stride)


def sample_route(
    scene: WalkableScene,
    seed: int,
    min_length: float = 18.0,
    max_attempts: int = 200,
    stride: float = 0.10,
    heading: str = "tangent",
    fixed_orientation: EulerAngles | None = None,
    smooth_lam: float = 0.5,
    smooth_iterations: int = 10,
) -> tuple[ExplorationRoute, SampleStats]:
    """Draw routes until one survives the length and collision filters.

    Attempt i uses its own derived random stream (see :func:`derive_stream`),
    so the procedure is reproducible and could run attempts in parallel while
    still accepting the lowest successful attempt index.  Raises
    :class:`RouteSamplingError` carrying the rejection statistics when
    ``max_attempts`` is exhausted.
    """
    mesh = delaunay_triangulate(scene.points)
    nv = len(mesh.vertices)
    rejections = {"no_path": 0, "too_short": 0, "collision": 0}
    for attempt in range(max_attempts):
        rng = SplitMix64(derive_stream(seed, attempt))
        a = rng.below(nv)
        b = rng.below(nv)
        while b == a:
            b = rng.below(nv)
        try:
            path = shortest_path(mesh, a, b)
        except NoPathError:
            rejections["no_path"] += 1
            continue
        smoothed = laplacian_smooth(path, smooth_lam, smooth_iterations)
        try:
            route = normalize_route(
                smoothed,
                stride=stride,
                heading=heading,
                fixed_orientation=fixed_orientation,
                ground_z=scene.ground_z,
                camera_height=scene.camera_height,
            )
        except ValueError:
            rejections["too_short"] += 1
            continue
        if route.length < min_length - 1e-9:
            rejections["too_short"] += 1
            continue
        line = Polyline(route.positions()[:, :2])
        if collision_check(line, scene) is not None:
            rejections["collision"] += 1
            continue
        return route, SampleStats(attempts=attempt + 1, rejections=rejections)
    raise RouteSamplingError(
        f"no valid route after {max_attempts} attempts "
        f"(rejections: {rejections})",
        SampleStats(attempts=max_attempts, rejections=rejections),
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def bundled_scene_path(name: str) -> str:
    """Filesystem path of a scene shipped with the package (e.g. "grid_30m")."""
    from importlib import resources

    candidate = resources.files("panosphere").joinpath("data", f"{name}.json")
    if not candidate.is_file():
        raise ValueError(f"no bundled scene named {name!r}")
    return str(candidate)


def read_scene(path) -> WalkableScene:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        return WalkableScene(
            points=[tuple(p) for p in obj["points"]],
            obstacles=[
                Box(tuple(o["min"]), tuple(o["max"]))
                for o in obj.get("obstacles", [])
            ],
            ground_z=float(obj.get("ground_z", 0.0)),
            camera_height=float(obj.get("camera_height", 1.6)),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed scene file {path}: {exc}") from exc


def write_scene(scene: WalkableScene, path) -> None:
    obj = {
        "points": [[x, y] for x, y in scene.points],
        "obstacles": [
            {"min": list(b.min_corner), "max": list(b.max_corner)}
            for b in scene.obstacles
        ],
        "ground_z": scene.ground_z,
        "camera_height": scene.camera_height,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def write_route(frames, path) -> None:
    """One JSON object per frame: t, x, y, z, yaw, pitch, roll."""
    if isinstance(frames, ExplorationRoute):
        frames = frames.frames
    with open(path, "w", encoding="utf-8") as fh:
        for i, pose in enumerate(frames):
            fh.write(
                json.dumps(
                    {
                        "t": i,
                        "x": pose.position[0],
                        "y": pose.position[1],
                        "z": pose.position[2],
                        "yaw": pose.orientation.alpha,
                        "pitch": pose.orientation.beta,
                        "roll": pose.orientation.gamma,
                    }
                )
            )
            fh.write("\n")


def read_route(path) -> list[CameraPose]:
    poses = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                poses.append(
                    CameraPose(
                        (obj["x"], obj["y"], obj["z"]),
                        EulerAngles(obj["yaw"], obj["pitch"], obj["roll"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(
                    f"malformed route file {path} at line {lineno}: {exc}"
                ) from exc
    if not poses:
        raise ValueError(f"route file {path} contains no frames")
    return poses


__all__ = [
    "SplitMix64",
    "derive_stream",
    "Box",
    "WalkableScene",
    "Polyline",
    "NavMesh",
    "Collision",
    "SampleStats",
    "NoPathError",
    "RouteSamplingError",
    "ExplorationRoute",
    "delaunay_triangulate",
    "shortest_path",
    "laplacian_smooth",
    "turning_energy",
    "collision_check",
    "normalize_route",
    "sample_route",
    "read_scene",
    "write_scene",
    "write_route",
    "read_route",
]
