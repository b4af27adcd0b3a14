import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from panosphere.geometry import EulerAngles
from panosphere.plucker import CameraPose
from panosphere.routes import (
    Box,
    Collision,
    ExplorationRoute,
    NavMesh,
    NoPathError,
    Polyline,
    RouteSamplingError,
    SplitMix64,
    WalkableScene,
    bundled_scene_path,
    collision_check,
    delaunay_triangulate,
    derive_stream,
    laplacian_smooth,
    normalize_route,
    read_route,
    read_scene,
    sample_route,
    shortest_path,
    turning_energy,
    write_route,
    write_scene,
)


def circumcircle(a, b, c):
    """Center and radius of the circle through three points (independent oracle)."""
    ax, ay = a
    bx, by = b
    cx, cy = c
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    ux = ((ax**2 + ay**2) * (by - cy) + (bx**2 + by**2) * (cy - ay) + (cx**2 + cy**2) * (ay - by)) / d
    uy = ((ax**2 + ay**2) * (cx - bx) + (bx**2 + by**2) * (ax - cx) + (cx**2 + cy**2) * (bx - ax)) / d
    return (ux, uy), math.hypot(ax - ux, ay - uy)


def assert_delaunay(mesh: NavMesh, tol: float = 1e-9) -> None:
    pts = mesh.vertices
    for tri in mesh.triangles:
        center, radius = circumcircle(*(pts[i] for i in tri))
        for v in range(len(pts)):
            if v in tri:
                continue
            dist = math.hypot(pts[v][0] - center[0], pts[v][1] - center[1])
            assert dist > radius - tol, (
                f"vertex {v} strictly inside circumcircle of {tri}"
            )


def exhaustive_shortest(mesh: NavMesh, a: int, b: int) -> float:
    adj = mesh.adjacency()
    best = math.inf

    def walk(u, seen, acc):
        nonlocal best
        if acc >= best:
            return
        if u == b:
            best = acc
            return
        for v, w in adj[u]:
            if v not in seen:
                walk(v, seen | {v}, acc + w)

    walk(a, {a}, 0.0)
    return best


class TestSplitMix:
    def test_reference_stream(self):
        # splitmix64 with seed 0: first outputs of the standard algorithm
        gen = SplitMix64(0)
        assert gen.next_u64() == 0xE220A8397B1DCDAF
        assert gen.next_u64() == 0x6E789E6AA1B965F4

    def test_streams_are_reproducible_and_distinct(self):
        a = SplitMix64(derive_stream(42, 0))
        b = SplitMix64(derive_stream(42, 0))
        c = SplitMix64(derive_stream(42, 1))
        seq_a = [a.next_u64() for _ in range(4)]
        assert seq_a == [b.next_u64() for _ in range(4)]
        assert seq_a != [c.next_u64() for _ in range(4)]


class TestDelaunay:
    def test_single_triangle(self):
        mesh = delaunay_triangulate([(0, 0), (1, 0), (0, 1)])
        assert len(mesh.triangles) == 1
        assert len(mesh.edges) == 3

    def test_square_uses_lower_index_diagonal(self):
        # perfect square: both diagonals satisfy the circle test; the tie
        # breaks toward the diagonal whose lower endpoint index is smaller
        mesh = delaunay_triangulate([(0, 0), (1, 0), (1, 1), (0, 1)])
        assert len(mesh.triangles) == 2
        edges = {(a, b) for a, b, _ in mesh.edges}
        assert (0, 2) in edges
        assert (1, 3) not in edges
        assert_delaunay(mesh)

    def test_collinear_rejected(self):
        with pytest.raises(ValueError, match="collinear"):
            delaunay_triangulate([(0, 0), (1, 1), (2, 2), (3, 3)])

    def test_duplicates_warn(self):
        with pytest.warns(UserWarning, match="1 duplicate"):
            mesh = delaunay_triangulate([(0, 0), (1, 0), (0, 1), (1, 0)])
        assert len(mesh.vertices) == 3

    def test_random_cloud_is_delaunay(self, rng):
        pts = [tuple(p) for p in rng.uniform(0, 10, size=(50, 2))]
        mesh = delaunay_triangulate(pts)
        assert_delaunay(mesh)

    def test_grid_scene_is_delaunay_and_deterministic(self):
        pts = [(x * 2.0, y * 2.0) for y in range(6) for x in range(6)]
        mesh1 = delaunay_triangulate(pts)
        mesh2 = delaunay_triangulate(pts)
        assert mesh1.triangles == mesh2.triangles
        assert_delaunay(mesh1)

    def test_edge_lengths_are_euclidean(self):
        mesh = delaunay_triangulate([(0, 0), (3, 0), (0, 4)])
        lengths = {(a, b): w for a, b, w in mesh.edges}
        assert lengths[(0, 1)] == 3.0
        assert lengths[(0, 2)] == 4.0
        assert lengths[(1, 2)] == 5.0


class TestShortestPath:
    def test_direct_edge_wins(self):
        mesh = delaunay_triangulate([(0, 0), (1, 0), (0.5, 0.1)])
        path = shortest_path(mesh, 0, 1)
        assert np.array_equal(path.points, [[0, 0], [1, 0]])

    def test_two_short_edges_beat_one_long(self):
        # triangle with weights 1, 1, 2.5 via a synthetic mesh
        mesh = NavMesh(
            vertices=np.array([[0.0, 0.0], [2.5, 0.0], [0.0, 1.0]]),
            triangles=((0, 1, 2),),
            edges=((0, 1, 2.5), (0, 2, 1.0), (1, 2, 1.0)),
        )
        path = shortest_path(mesh, 0, 1)
        assert [tuple(p) for p in path.points] == [(0, 0), (0, 1), (2.5, 0)]

    def test_matches_exhaustive_search(self, rng):
        for _ in range(8):
            pts = [tuple(p) for p in rng.uniform(0, 5, size=(10, 2))]
            mesh = delaunay_triangulate(pts)
            a, b = 0, len(mesh.vertices) - 1
            path = shortest_path(mesh, a, b)
            length = float(
                np.sum(np.linalg.norm(np.diff(path.points, axis=0), axis=1))
            )
            assert length == pytest.approx(exhaustive_shortest(mesh, a, b), abs=1e-9)

    def test_no_path_error(self):
        mesh = NavMesh(
            vertices=np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [6.0, 5.0]]),
            triangles=(),
            edges=((0, 1, 1.0), (2, 3, 1.0)),
        )
        with pytest.raises(NoPathError):
            shortest_path(mesh, 0, 3)

    def test_same_endpoints_rejected(self):
        mesh = delaunay_triangulate([(0, 0), (1, 0), (0, 1)])
        with pytest.raises(ValueError):
            shortest_path(mesh, 1, 1)


class TestSmoothing:
    def test_collinear_path_is_fixed_point(self):
        pts = [(0.0, 0.0), (0.25, 0.0), (0.5, 0.0), (0.75, 0.0), (1.0, 0.0)]
        out = laplacian_smooth(Polyline(pts), 0.5, 3)
        assert np.array_equal(out.points, np.asarray(pts))

    def test_single_step_hand_computed(self):
        out = laplacian_smooth(Polyline([(0, 0), (1, 1), (2, 0)]), 0.5, 1)
        assert np.allclose(out.points[1], [1.0, 0.5], atol=1e-15)

    def test_endpoints_pinned(self, rng):
        pts = rng.uniform(-3, 3, size=(9, 2))
        line = Polyline(pts)
        out = laplacian_smooth(line, 0.8, 25)
        assert np.array_equal(out.points[0], line.points[0])
        assert np.array_equal(out.points[-1], line.points[-1])

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(
            st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
            min_size=4,
            max_size=12,
        ),
        st.floats(0.05, 1.0),
    )
    def test_turning_energy_never_increases(self, raw, lam):
        pts = []
        for p in raw:
            if not pts or p != pts[-1]:
                pts.append(p)
        if len(pts) < 4:
            return
        line = Polyline(pts)
        energies = [turning_energy(line)]
        for _ in range(5):
            line = laplacian_smooth(line, lam, 1)
            energies.append(turning_energy(line))
        for before, after in zip(energies, energies[1:]):
            assert after <= before + 1e-12

    def test_short_path_returned_unchanged(self):
        line = Polyline([(0, 0), (1, 0)])
        assert laplacian_smooth(line, 0.5, 10) is line


class TestCollision:
    SCENE = WalkableScene(
        points=[(-5, -5), (5, -5), (0, 5)],
        obstacles=[Box((0.0, 0.0, 0.0), (1.0, 1.0, 3.0))],
        ground_z=0.0,
        camera_height=1.6,
    )

    def test_segment_through_box(self):
        hit = collision_check(Polyline([(-1.0, 0.5), (2.0, 0.5)]), self.SCENE)
        assert hit == Collision(segment_index=0, obstacle_index=0)

    def test_camera_passes_above_low_box(self):
        scene = WalkableScene(
            points=self.SCENE.points,
            obstacles=[Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))],
            camera_height=1.6,
        )
        assert collision_check(Polyline([(-1.0, 0.5), (2.0, 0.5)]), scene) is None

    def test_grazing_face_counts_as_hit(self):
        scene = WalkableScene(
            points=self.SCENE.points,
            obstacles=[Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.6))],  # top at camera z
            camera_height=1.6,
        )
        assert collision_check(Polyline([(-1.0, 0.5), (2.0, 0.5)]), scene) is not None

    def test_first_collision_reported(self):
        scene = WalkableScene(
            points=self.SCENE.points,
            obstacles=[
                Box((10.0, 0.0, 0.0), (11.0, 1.0, 3.0)),
                Box((0.2, 0.0, 0.0), (0.8, 1.0, 3.0)),
            ],
        )
        hit = collision_check(
            Polyline([(-1.0, 0.5), (2.0, 0.5), (12.0, 0.5)]), scene
        )
        assert hit == Collision(segment_index=0, obstacle_index=1)

    def test_box_validation(self):
        with pytest.raises(ValueError):
            Box((0, 0, 0), (1, -1, 1))


class TestNormalizeRoute:
    def test_straight_meter_gives_eleven_frames(self):
        route = normalize_route(Polyline([(0.0, 0.0), (1.0, 0.0)]), stride=0.10)
        assert len(route.frames) == 11
        yaws = {f.orientation.alpha for f in route.frames}
        assert yaws == {0.0}
        gaps = np.linalg.norm(np.diff(route.positions(), axis=0), axis=1)
        assert np.max(np.abs(gaps - 0.10)) < 1e-6

    def test_l_shaped_path_keeps_exact_stride(self):
        route = normalize_route(
            Polyline([(0.0, 0.0), (0.55, 0.0), (0.55, 0.55)]), stride=0.10
        )
        gaps = np.linalg.norm(np.diff(route.positions(), axis=0), axis=1)
        assert np.max(np.abs(gaps - 0.10)) < 1e-6

    def test_fixed_heading_mode(self):
        route = normalize_route(
            Polyline([(0, 0), (1, 1)]),
            stride=0.25,
            heading="fixed",
            fixed_orientation=EulerAngles(),
        )
        for f in route.frames:
            assert f.orientation == EulerAngles(0.0, 0.0, 0.0)

    def test_positions_lifted_to_camera_height(self):
        route = normalize_route(
            Polyline([(0, 0), (1, 0)]), stride=0.5, ground_z=0.25, camera_height=1.6
        )
        assert {f.position[2] for f in route.frames} == {1.85}

    def test_tangent_yaw_follows_motion(self):
        route = normalize_route(Polyline([(0, 0), (0, 2)]), stride=0.5)
        assert all(f.orientation.alpha == pytest.approx(math.pi / 2) for f in route.frames)

    def test_too_short_path_rejected(self):
        with pytest.raises(ValueError, match="stride"):
            normalize_route(Polyline([(0, 0), (0.05, 0)]), stride=0.10)

    def test_route_invariant_enforced(self):
        poses = [CameraPose((0.0, 0, 0)), CameraPose((0.3, 0, 0))]
        with pytest.raises(ValueError, match="stride"):
            ExplorationRoute(frames=poses, stride=0.10)


class TestSampleRoute:
    def test_open_grid_scene_succeeds(self):
        scene = read_scene(bundled_scene_path("grid_30m"))
        route, stats = sample_route(scene, seed=3)
        assert route.length >= 18.0
        assert stats.attempts >= 1
        line = Polyline(route.positions()[:, :2])
        assert collision_check(line, scene) is None

    def test_same_seed_bit_identical(self, tmp_path):
        scene = read_scene(bundled_scene_path("courtyard_30m"))
        r1, s1 = sample_route(scene, seed=11)
        r2, s2 = sample_route(scene, seed=11)
        assert s1 == s2
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_route(r1, p1)
        write_route(r2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_blocked_scene_exhausts_with_collision_stats(self):
        # a wall tall enough to cover the camera plane splits the scene
        pts = [(x * 1.0, y * 1.0) for y in range(4) for x in range(21)]
        scene = WalkableScene(
            points=pts,
            obstacles=[Box((9.5, -1.0, 0.0), (10.5, 4.0, 5.0))],
            camera_height=1.6,
        )
        with pytest.raises(RouteSamplingError) as err:
            sample_route(scene, seed=0, min_length=12.0, max_attempts=30)
        stats = err.value.stats
        assert stats.attempts == 30
        assert stats.rejections["collision"] > 0
        # every attempt long enough to qualify must have been stopped by the wall
        assert (
            stats.rejections["collision"] + stats.rejections["too_short"] == 30
        )

    def test_accepted_routes_always_pass_filters(self):
        scene = read_scene(bundled_scene_path("courtyard_30m"))
        for seed in (1, 2, 3):
            route, _ = sample_route(scene, seed=seed)
            assert route.length >= 18.0
            line = Polyline(route.positions()[:, :2])
            assert collision_check(line, scene) is None


class TestFiles:
    def test_scene_round_trip(self, tmp_path):
        scene = WalkableScene(
            points=[(0, 0), (1, 0), (0, 1)],
            obstacles=[Box((0, 0, 0), (1, 1, 1))],
            ground_z=-0.5,
            camera_height=1.2,
        )
        p = tmp_path / "scene.json"
        write_scene(scene, p)
        again = read_scene(p)
        assert again.points == scene.points
        assert again.obstacles == scene.obstacles
        assert again.ground_z == scene.ground_z
        assert again.camera_height == scene.camera_height

    def test_route_round_trip_byte_identical(self, tmp_path):
        route = normalize_route(Polyline([(0, 0), (1.3, 0.4)]), stride=0.2)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_route(route, p1)
        poses = read_route(p1)
        write_route(poses, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_malformed_route_reports_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"t": 0, "x": 1, "y": 2, "z": 3, "yaw": 0, "pitch": 0, "roll": 0}\n{oops\n')
        with pytest.raises(ValueError, match="line 2"):
            read_route(p)

    def test_scene_validation(self):
        with pytest.raises(ValueError, match="3 walkable"):
            WalkableScene(points=[(0, 0), (1, 1)])
