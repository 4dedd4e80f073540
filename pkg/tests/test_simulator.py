import json
import math
from pathlib import Path

import numpy as np
import pytest
from shapely.geometry import LineString, Point, Polygon

from evigrid.evidence import FREE, OCC
from evigrid.grid import GridGeometry, Pose2D
from evigrid.io import read_recording
from evigrid.simulator import (
    RadarNoiseModel,
    ScenarioConfig,
    World,
    first_hits,
    generate_scenario,
    simulate_lidar,
    simulate_radar,
    trajectory_poses,
)

BOX = [[10.0, 7.0], [12.0, 7.0], [12.0, 9.0], [10.0, 9.0]]


def random_world(rng, extent=16.0, n_obstacles=3):
    polys = []
    while len(polys) < n_obstacles:
        cx, cy = rng.uniform(3, extent - 3, 2)
        r = rng.uniform(0.6, 2.0)
        k = int(rng.integers(3, 7))
        phase = rng.uniform(0, 2 * math.pi)
        ang = phase + np.sort(rng.uniform(0, 2 * math.pi, k))
        poly = np.stack([cx + r * np.cos(ang), cy + r * np.sin(ang)], axis=1)
        hull = Polygon(poly).convex_hull
        if hull.area < 0.3:
            continue
        pts = np.asarray(hull.exterior.coords)[:-1]
        if pts.min() < 0 or pts.max() > extent:
            continue
        polys.append(pts)
    return World(extent, polys)


class TestWorld:
    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            World(16.0, [[[0, 0], [1, 0]]])
        with pytest.raises(ValueError):
            World(16.0, [[[0, 0], [1, 0], [2, 0]]])

    def test_rejects_outside_extent(self):
        with pytest.raises(ValueError):
            World(4.0, [BOX])

    def test_contains_point_matches_shapely(self):
        rng = np.random.default_rng(0)
        world = random_world(rng)
        shapes = [Polygon(p) for p in world.obstacles]
        for _ in range(500):
            x, y = rng.uniform(0, 16, 2)
            expect = any(s.covers(Point(x, y)) for s in shapes)
            assert world.contains_point(x, y) == expect

    def test_occupancy_matches_point_tests(self):
        rng = np.random.default_rng(1)
        for seed in range(5):
            world = random_world(np.random.default_rng(seed))
            geom = GridGeometry(32, 32, 0.5, 0.0, 0.0)
            occ = world.occupancy(geom)
            shapes = [Polygon(p) for p in world.obstacles]
            x, y = geom.cell_centers()
            for r in range(32):
                for c in range(32):
                    expect = any(s.covers(Point(x[r, c], y[r, c])) for s in shapes)
                    assert occ[r, c] == expect, (seed, r, c)

    def test_ground_truth_grid_classes(self):
        world = World(16.0, [BOX])
        geom = GridGeometry(32, 32, 0.5, 0.0, 0.0)
        grid = world.ground_truth_grid(geom)
        occ = world.occupancy(geom)
        assert (grid.data[occ, OCC] == 1.0).all()
        assert (grid.data[~occ, FREE] == 1.0).all()


class TestFirstHits:
    def test_matches_shapely(self):
        rng = np.random.default_rng(3)
        world = random_world(rng)
        shapes = [Polygon(p) for p in world.obstacles]
        origin = np.array([1.0, 1.0])
        bearings = rng.uniform(-math.pi, math.pi, 50)
        ranges, _ = first_hits(world, origin, bearings)
        far = 100.0
        for theta, got in zip(bearings, ranges):
            end = origin + far * np.array([math.cos(theta), math.sin(theta)])
            seg = LineString([origin, end])
            best = math.inf
            for s in shapes:
                inter = seg.intersection(s.exterior)
                if not inter.is_empty:
                    d = (
                        min(Point(origin).distance(g) for g in getattr(inter, "geoms", [inter]))
                    )
                    best = min(best, d)
            if math.isinf(best):
                assert math.isinf(got)
            else:
                assert got == pytest.approx(best, abs=1e-9)


class TestLidar:
    def test_empty_world_no_detections(self):
        scan = simulate_lidar(World(16.0), Pose2D(8, 8), 90, 6.0)
        assert scan.points.shape == (0, 2)

    def test_boxed_in_all_beams_hit(self):
        yard = [[6.0, 6.0], [10.0, 6.0], [10.0, 10.0], [6.0, 10.0]]
        # sensor inside a hollow: use four walls around it
        walls = [
            [[5, 5], [11, 5], [11, 5.5], [5, 5.5]],
            [[5, 10.5], [11, 10.5], [11, 11], [5, 11]],
            [[5, 5.5], [5.5, 5.5], [5.5, 10.5], [5, 10.5]],
            [[10.5, 5.5], [11, 5.5], [11, 10.5], [10.5, 10.5]],
        ]
        scan = simulate_lidar(World(16.0, walls), Pose2D(8, 8), 180, 12.0)
        assert scan.points.shape[0] == 180

    def test_detections_lie_on_boundaries(self):
        rng = np.random.default_rng(4)
        world = random_world(rng)
        pose = Pose2D(1.0, 1.0, 0.7)
        scan = simulate_lidar(world, pose, 360, 14.0)
        assert scan.points.shape[0] > 0
        shapes = [Polygon(p).exterior for p in world.obstacles]
        for pt in scan.world_points():
            d = min(s.distance(Point(pt)) for s in shapes)
            assert d < 1e-9

    def test_box_ahead_range(self):
        world = World(16.0, [BOX])
        scan = simulate_lidar(world, Pose2D(8.0, 8.0, 0.0), 360, 10.0)
        ahead = scan.points[np.abs(scan.points[:, 1]) < 1e-9]
        assert ahead.shape[0] == 1
        assert ahead[0, 0] == pytest.approx(2.0, abs=1e-12)  # wall face at x=10

    def test_z_passes_height_filter(self):
        scan = simulate_lidar(World(16.0, [BOX]), Pose2D(8, 8), 90, 10.0)
        assert (scan.z == 1.0).all()

    def test_pose_inside_obstacle(self):
        with pytest.raises(ValueError, match="obstacle"):
            simulate_lidar(World(16.0, [BOX]), Pose2D(11.0, 8.0), 90, 10.0)


class TestRadar:
    def test_all_off_empty(self):
        noise = RadarNoiseModel(detection_probability=0.0)
        rng = np.random.default_rng(0)
        scan = simulate_radar(World(16.0, [BOX]), Pose2D(8, 8), noise, rng)
        assert scan.points.shape == (0, 2)

    def test_zero_noise_subset_of_lidar_hits(self):
        world = World(16.0, [BOX])
        pose = Pose2D(8.03, 8.07, 0.2)
        noise = RadarNoiseModel(detection_probability=1.0)
        rng = np.random.default_rng(0)
        radar = simulate_radar(world, pose, noise, rng, beam_count=180, max_range=12.0)
        lidar = simulate_lidar(world, pose, 180, 12.0)
        lidar_set = {tuple(np.round(p, 9)) for p in lidar.points}
        assert radar.points.shape[0] > 0
        for p in radar.points:
            assert tuple(np.round(p, 9)) in lidar_set

    def test_ghosts_behind_surfaces(self):
        world = World(16.0, [BOX])
        pose = Pose2D(8.0, 8.0, 0.0)
        noise = RadarNoiseModel(detection_probability=1.0, ghost_rate=2.0)
        found = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            scan = simulate_radar(world, pose, noise, rng, beam_count=90, max_range=12.0)
            ranges = np.hypot(scan.points[:, 0], scan.points[:, 1])
            bearings = np.arctan2(scan.points[:, 1], scan.points[:, 0]) + pose.theta
            true_r, _ = first_hits(world, np.array([pose.x, pose.y]), bearings)
            if np.any(ranges > true_r + 1e-6):
                found += 1
        assert found > 0

    def test_clutter_only(self):
        noise = RadarNoiseModel(detection_probability=0.0, clutter_rate=5.0)
        rng = np.random.default_rng(1)
        scan = simulate_radar(World(16.0), Pose2D(8, 8), noise, rng, max_range=6.0)
        assert scan.points.shape[0] > 0
        assert (np.hypot(scan.points[:, 0], scan.points[:, 1]) <= 6.0).all()

    def test_deterministic_given_rng_state(self):
        world = World(16.0, [BOX])
        noise = RadarNoiseModel(0.7, 0.05, 0.01, 1.0, 1.0)
        a = simulate_radar(world, Pose2D(8, 8), noise, np.random.default_rng(9))
        b = simulate_radar(world, Pose2D(8, 8), noise, np.random.default_rng(9))
        np.testing.assert_array_equal(a.points, b.points)


class TestTrajectory:
    def test_single_waypoint_stationary(self):
        poses = trajectory_poses(np.array([[3.0, 4.0, 0.5]]), 5)
        assert len(poses) == 5
        assert all(p == Pose2D(3.0, 4.0, 0.5) for p in poses)

    def test_constant_speed_two_segments(self):
        wps = np.array([[0.0, 0.0, math.nan], [4.0, 0.0, math.nan], [4.0, 4.0, math.nan]])
        poses = trajectory_poses(wps, 9)
        assert poses[0] == Pose2D(0, 0, 0.0)
        assert poses[4].x == pytest.approx(4.0) and poses[4].y == pytest.approx(0.0)
        assert poses[-1].x == pytest.approx(4.0) and poses[-1].y == pytest.approx(4.0)
        assert poses[-1].theta == pytest.approx(math.pi / 2)

    def test_explicit_theta_wins(self):
        wps = np.array([[0.0, 0.0, 1.0], [4.0, 0.0, 1.0]])
        poses = trajectory_poses(wps, 3)
        assert all(p.theta == 1.0 for p in poses)


def scenario_json(tmp_path, seed=0, epochs=6, noise=None, obstacles=(BOX,)):
    cfg = {
        "seed": seed,
        "world": {"extent": 16.0, "obstacles": [list(map(list, o)) for o in obstacles]},
        "trajectory": {"waypoints": [[2.0, 8.0], [6.0, 8.0]], "epochs": epochs},
        "grid": {"width": 32, "height": 32, "resolution": 0.5, "origin": [0.0, 0.0]},
        "scan_rate": 10.0,
        "sensors": {
            "lidar": {"enabled": True, "beam_count": 90, "max_range": 10.0},
            "radar": {"enabled": True, "beam_count": 90, "max_range": 10.0,
                      "noise": noise or {}},
        },
    }
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(cfg))
    return path


class TestGenerateScenario:
    def test_zero_waypoints_rejected(self):
        with pytest.raises(ValueError, match="waypoint"):
            ScenarioConfig.from_json(
                {
                    "seed": 0,
                    "world": {"extent": 16.0},
                    "trajectory": {"waypoints": [], "epochs": 3},
                    "grid": {"width": 8, "height": 8, "resolution": 2.0, "origin": [0, 0]},
                }
            )

    def test_counts_and_order(self, tmp_path):
        config = ScenarioConfig.load(scenario_json(tmp_path, epochs=20))
        rec_dir = generate_scenario(config, tmp_path / "rec")
        rec = read_recording(rec_dir)
        epochs = rec.epochs()
        assert len(epochs) == 20
        for epoch in epochs:
            kinds = sorted(s.sensor_kind for s in epoch)
            assert kinds == ["lidar", "radar"]
        times = [e[0].timestamp for e in epochs]
        assert times == sorted(times)
        assert rec.ground_truth() is not None

    def test_deterministic_bytes(self, tmp_path):
        noise = {"detection_probability": 0.8, "range_sigma": 0.05,
                 "bearing_sigma": 0.01, "ghost_rate": 0.5, "clutter_rate": 0.5}
        config = ScenarioConfig.load(scenario_json(tmp_path, seed=7, noise=noise))
        a = generate_scenario(config, tmp_path / "a")
        b = generate_scenario(config, tmp_path / "b")
        for name in ("scans.csv", "meta.json", "ground_truth.evgr"):
            assert (Path(a) / name).read_bytes() == (Path(b) / name).read_bytes()

    def test_infeasible_trajectory(self, tmp_path):
        path = scenario_json(tmp_path)
        cfg = json.loads(path.read_text())
        cfg["trajectory"]["waypoints"] = [[8.0, 8.0], [11.0, 8.0]]  # ends inside the box
        path.write_text(json.dumps(cfg))
        with pytest.raises(ValueError, match="obstacle"):
            generate_scenario(ScenarioConfig.load(path), tmp_path / "rec")

    def test_ground_truth_matches_world(self, tmp_path):
        config = ScenarioConfig.load(scenario_json(tmp_path))
        rec = read_recording(generate_scenario(config, tmp_path / "rec"))
        gt = rec.ground_truth()
        occ = World(16.0, [BOX]).occupancy(rec.geometry)
        np.testing.assert_array_equal(gt.data[..., OCC] == 1.0, occ)
