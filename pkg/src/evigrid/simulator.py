"""Synthetic 2D worlds and sensors producing scan recordings at desk scale.

Worlds are collections of convex polygonal obstacles in a square extent.
Lidar returns exact first intersections on a full-circle fan; radar
subsamples visible surface cells and adds range/bearing noise, single-bounce
mirror ghosts, and uniform clutter. A scenario config turns a world plus a
trajectory into a recording directory with ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import LIDAR, RADAR, EvidenceGrid, GridGeometry, Pose2D, Scan, vacuous_data
from .evidence import FREE, OCC
from .io import geometry_from_json, geometry_to_json, write_grid, write_recording


def signed_polygon_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_area(vertices: np.ndarray) -> float:
    return abs(signed_polygon_area(vertices))


@dataclass
class World:
    """Square world [0, extent]^2 with convex polygonal obstacles."""

    extent: float
    obstacles: list = field(default_factory=list)

    def __post_init__(self):
        self.obstacles = [np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in self.obstacles]
        for poly in self.obstacles:
            if poly.shape[0] < 3:
                raise ValueError("obstacle polygons need at least 3 vertices")
            if polygon_area(poly) <= 0.0:
                raise ValueError("degenerate obstacle polygon")
            if np.any(poly < 0.0) or np.any(poly > self.extent):
                raise ValueError("obstacle outside world extent")

    def edges(self) -> np.ndarray:
        """All obstacle edges as an (E, 2, 2) array of segments."""
        segs = []
        for poly in self.obstacles:
            nxt = np.roll(poly, -1, axis=0)
            segs.append(np.stack([poly, nxt], axis=1))
        if not segs:
            return np.zeros((0, 2, 2))
        return np.concatenate(segs, axis=0)

    def contains_point(self, x: float, y: float) -> bool:
        """True when the point lies inside or on any obstacle."""
        p = np.array([x, y])
        for poly in self.obstacles:
            nxt = np.roll(poly, -1, axis=0)
            edge = nxt - poly
            rel = p[None, :] - poly
            cross = edge[:, 0] * rel[:, 1] - edge[:, 1] * rel[:, 0]
            # convex polygons are stored with consistent winding
            if np.all(cross >= 0.0) or np.all(cross <= 0.0):
                return True
        return False

    def occupancy(self, geometry: GridGeometry, frame: Pose2D = None) -> np.ndarray:
        """Boolean occupancy of all cell centers (boundary counts occupied).

        ``frame`` is the pose of the grid's frame in world coordinates; omit
        it when the grid already lives in the world frame.
        """
        x, y = geometry.cell_centers()
        if frame is not None and not frame.is_identity:
            c, s = math.cos(frame.theta), math.sin(frame.theta)
            x, y = c * x - s * y + frame.x, s * x + c * y + frame.y
        occ = np.zeros((geometry.height, geometry.width), dtype=bool)
        for poly in self.obstacles:
            nxt = np.roll(poly, -1, axis=0)
            inside = np.ones_like(occ)
            # interior lies left of each edge for counter-clockwise winding
            sign = 1.0 if signed_polygon_area(poly) > 0.0 else -1.0
            for (ax, ay), (bx, by) in zip(poly, nxt):
                cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
                inside &= sign * cross >= 0.0
            occ |= inside
        return occ

    def ground_truth_grid(self, geometry: GridGeometry) -> EvidenceGrid:
        occ = self.occupancy(geometry)
        data = vacuous_data(geometry.height, geometry.width)
        data[occ] = (0.0, 1.0, 0.0)
        data[~occ] = (1.0, 0.0, 0.0)
        return EvidenceGrid(geometry, data)


def first_hits(world: World, origin: np.ndarray, bearings: np.ndarray):
    """First obstacle intersection per bearing.

    Returns (ranges, edge_index), with inf range and -1 where nothing is hit.
    """
    edges = world.edges()
    ranges = np.full(bearings.shape[0], np.inf)
    hit_edge = np.full(bearings.shape[0], -1, dtype=np.int64)
    if edges.shape[0] == 0:
        return ranges, hit_edge
    a = edges[:, 0]
    e = edges[:, 1] - edges[:, 0]
    d = np.stack([np.cos(bearings), np.sin(bearings)], axis=1)
    rel = a[None, :, :] - origin[None, None, :]
    denom = d[:, None, 0] * (-e[None, :, 1]) - d[:, None, 1] * (-e[None, :, 0])
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rel[..., 0] * (-e[None, :, 1]) - rel[..., 1] * (-e[None, :, 0])) / denom
        s = (d[:, None, 0] * rel[..., 1] - d[:, None, 1] * rel[..., 0]) / denom
    valid = (np.abs(denom) > 1e-300) & (t > 1e-12) & (s >= 0.0) & (s <= 1.0)
    t = np.where(valid, t, np.inf)
    idx = np.argmin(t, axis=1)
    rows = np.arange(bearings.shape[0])
    ranges = t[rows, idx]
    hit_edge = np.where(np.isfinite(ranges), idx, -1)
    return ranges, hit_edge


@dataclass(frozen=True)
class RadarNoiseModel:
    detection_probability: float = 1.0
    range_sigma: float = 0.0
    bearing_sigma: float = 0.0
    ghost_rate: float = 0.0
    clutter_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.detection_probability <= 1.0:
            raise ValueError("detection probability must lie in [0, 1]")
        if self.range_sigma < 0.0 or self.bearing_sigma < 0.0:
            raise ValueError("noise sigmas must be non-negative")
        if self.ghost_rate < 0.0 or self.clutter_rate < 0.0:
            raise ValueError("rates must be non-negative")


def simulate_lidar(
    world: World,
    pose: Pose2D,
    beam_count: int,
    max_range: float,
    timestamp: float = 0.0,
    sensor_id: int = 0,
) -> Scan:
    """Exact first-intersection scan on evenly spaced bearings.

    Detection heights are fixed at 1.0 m so they pass the default inverse
    lidar model height filter.
    """
    if world.contains_point(pose.x, pose.y):
        raise ValueError("sensor pose inside an obstacle")
    local = 2.0 * math.pi * np.arange(beam_count) / beam_count
    ranges, _ = first_hits(world, np.array([pose.x, pose.y]), pose.theta + local)
    hit = ranges <= max_range
    pts = np.stack(
        [ranges[hit] * np.cos(local[hit]), ranges[hit] * np.sin(local[hit])], axis=1
    )
    return Scan(timestamp, pose, LIDAR, sensor_id, pts, z=np.full(pts.shape[0], 1.0))


def simulate_radar(
    world: World,
    pose: Pose2D,
    noise: RadarNoiseModel,
    rng: np.random.Generator,
    beam_count: int = 256,
    max_range: float = 20.0,
    surface_cell: float = 0.25,
    timestamp: float = 0.0,
    sensor_id: int = 1,
) -> Scan:
    """Noisy detections of visible surfaces plus ghosts and clutter.

    Visible surface points are deduplicated to one candidate per
    ``surface_cell``-sized patch before the detection-probability draw. The
    rng stream order is fixed: per-candidate keep draws, range noise,
    bearing noise, ghost count/choices/noise, clutter count/draws.
    """
    if world.contains_point(pose.x, pose.y):
        raise ValueError("sensor pose inside an obstacle")
    origin = np.array([pose.x, pose.y])
    local = 2.0 * math.pi * np.arange(beam_count) / beam_count
    ranges, hit_edge = first_hits(world, origin, pose.theta + local)
    hit = ranges <= max_range
    hit_local = local[hit]
    hit_ranges = ranges[hit]
    hit_edges = hit_edge[hit]

    # one candidate per surface patch: first hit in bearing order wins
    wx = origin[0] + hit_ranges * np.cos(pose.theta + hit_local)
    wy = origin[1] + hit_ranges * np.sin(pose.theta + hit_local)
    patch = np.stack(
        [np.floor(wx / surface_cell).astype(np.int64), np.floor(wy / surface_cell).astype(np.int64)],
        axis=1,
    )
    _, first_idx = np.unique(patch, axis=0, return_index=True)
    first_idx.sort()
    cand_local = hit_local[first_idx]
    cand_ranges = hit_ranges[first_idx]
    cand_edges = hit_edges[first_idx]

    keep = rng.random(cand_local.shape[0]) < noise.detection_probability
    det_local = cand_local[keep]
    det_ranges = cand_ranges[keep]
    det_edges = cand_edges[keep]

    # scale-zero draws return exact zeros but keep the stream layout uniform
    det_ranges = det_ranges + rng.normal(0.0, noise.range_sigma, det_ranges.shape[0])
    det_local = det_local + rng.normal(0.0, noise.bearing_sigma, det_local.shape[0])

    points = [np.stack([det_ranges * np.cos(det_local), det_ranges * np.sin(det_local)], axis=1)]

    n_ghosts = int(rng.poisson(noise.ghost_rate)) if noise.ghost_rate > 0.0 else 0
    if n_ghosts and det_local.shape[0]:
        edges = world.edges()
        for _ in range(n_ghosts):
            pick = int(rng.integers(det_local.shape[0]))
            a, b = edges[det_edges[pick]]
            # mirror the sensor across the reflecting edge line; the phantom
            # return sits behind the surface along the perpendicular
            e = b - a
            ee = float(e @ e)
            if ee == 0.0:
                continue
            w = origin - a
            foot = a + (float(w @ e) / ee) * e
            ghost_world = 2.0 * foot - origin
            gx, gy = ghost_world - origin
            grange = math.hypot(gx, gy)
            gbear = math.atan2(gy, gx) - pose.theta
            grange += rng.normal(0.0, noise.range_sigma)
            gbear += rng.normal(0.0, noise.bearing_sigma)
            points.append(np.array([[grange * math.cos(gbear), grange * math.sin(gbear)]]))

    n_clutter = int(rng.poisson(noise.clutter_rate)) if noise.clutter_rate > 0.0 else 0
    if n_clutter:
        r = max_range * np.sqrt(rng.random(n_clutter))
        phi = rng.uniform(-math.pi, math.pi, n_clutter)
        points.append(np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1))

    nonempty = [p for p in points if p.size]
    pts = np.concatenate(nonempty, axis=0) if nonempty else np.zeros((0, 2))
    return Scan(timestamp, pose, RADAR, sensor_id, pts)


@dataclass
class ScenarioConfig:
    """Parsed scenario description; see README for the JSON schema."""

    seed: int
    world: World
    waypoints: np.ndarray  # (N, 3) x, y, theta (theta may be NaN = from path)
    epochs: int
    geometry: GridGeometry
    scan_rate: float = 10.0
    lidar_enabled: bool = True
    lidar_beam_count: int = 360
    lidar_max_range: float = 15.0
    radar_enabled: bool = True
    radar_beam_count: int = 256
    radar_max_range: float = 20.0
    radar_noise: RadarNoiseModel = field(default_factory=RadarNoiseModel)
    radar_surface_cell: float = 0.25

    @staticmethod
    def from_json(obj: dict) -> "ScenarioConfig":
        world = World(float(obj["world"]["extent"]), obj["world"].get("obstacles", []))
        traj = obj["trajectory"]
        raw_wp = traj.get("waypoints", [])
        if len(raw_wp) == 0:
            raise ValueError("trajectory needs at least one waypoint")
        wps = np.array(
            [[w[0], w[1], w[2] if len(w) > 2 else math.nan] for w in raw_wp], dtype=np.float64
        )
        sensors = obj.get("sensors", {})
        lidar = sensors.get("lidar", {})
        radar = sensors.get("radar", {})
        noise = RadarNoiseModel(**radar.get("noise", {}))
        return ScenarioConfig(
            seed=int(obj.get("seed", 0)),
            world=world,
            waypoints=wps,
            epochs=int(traj["epochs"]),
            geometry=geometry_from_json(obj["grid"]),
            scan_rate=float(obj.get("scan_rate", 10.0)),
            lidar_enabled=bool(lidar.get("enabled", True)),
            lidar_beam_count=int(lidar.get("beam_count", 360)),
            lidar_max_range=float(lidar.get("max_range", 15.0)),
            radar_enabled=bool(radar.get("enabled", True)),
            radar_beam_count=int(radar.get("beam_count", 256)),
            radar_max_range=float(radar.get("max_range", 20.0)),
            radar_noise=noise,
            radar_surface_cell=float(radar.get("surface_cell", 0.25)),
        )

    @staticmethod
    def load(path) -> "ScenarioConfig":
        with open(path) as fh:
            return ScenarioConfig.from_json(json.load(fh))


def trajectory_poses(waypoints: np.ndarray, epochs: int) -> list[Pose2D]:
    """Constant-speed poses along the piecewise-linear waypoint path."""
    if epochs < 1:
        raise ValueError("need at least one epoch")
    if waypoints.shape[0] == 1:
        x, y, th = waypoints[0]
        th = 0.0 if math.isnan(th) else th
        return [Pose2D(x, y, th)] * epochs
    xy = waypoints[:, :2]
    seg = np.diff(xy, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    if np.any(seg_len == 0.0):
        raise ValueError("zero-length trajectory segment")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    poses = []
    for i in range(epochs):
        dist = total * (i / (epochs - 1)) if epochs > 1 else 0.0
        k = min(int(np.searchsorted(cum, dist, side="right")) - 1, seg.shape[0] - 1)
        frac = (dist - cum[k]) / seg_len[k]
        x, y = xy[k] + frac * seg[k]
        heading = math.atan2(seg[k, 1], seg[k, 0])
        th = waypoints[k, 2]
        poses.append(Pose2D(x, y, heading if math.isnan(th) else th))
    return poses


def generate_scenario(config: ScenarioConfig, out_dir) -> Path:
    """Write a recording directory (scans.csv, meta.json, ground truth)."""
    out_dir = Path(out_dir)
    poses = trajectory_poses(config.waypoints, config.epochs)
    for pose in poses:
        if config.world.contains_point(pose.x, pose.y):
            raise ValueError(f"trajectory passes through an obstacle at ({pose.x}, {pose.y})")

    rng = np.random.default_rng(config.seed)
    scans = []
    for i, pose in enumerate(poses):
        t = i / config.scan_rate
        if config.lidar_enabled:
            scans.append(
                simulate_lidar(
                    config.world, pose, config.lidar_beam_count, config.lidar_max_range, t, 0
                )
            )
        if config.radar_enabled:
            scans.append(
                simulate_radar(
                    config.world,
                    pose,
                    config.radar_noise,
                    rng,
                    config.radar_beam_count,
                    config.radar_max_range,
                    config.radar_surface_cell,
                    t,
                    1,
                )
            )

    meta = {
        "grid": geometry_to_json(config.geometry),
        "sensors": {
            **({"0": {"kind": LIDAR, "extrinsic": [0.0, 0.0, 0.0]}} if config.lidar_enabled else {}),
            **({"1": {"kind": RADAR, "extrinsic": [0.0, 0.0, 0.0]}} if config.radar_enabled else {}),
        },
        "world": {
            "extent": config.world.extent,
            "obstacles": [poly.tolist() for poly in config.world.obstacles],
        },
        "ground_truth": "ground_truth.evgr",
        "scan_rate": config.scan_rate,
        "seed": config.seed,
        "epochs": config.epochs,
    }
    write_recording(out_dir, scans, meta)
    write_grid(out_dir / "ground_truth.evgr", config.world.ground_truth_grid(config.geometry))
    return out_dir
