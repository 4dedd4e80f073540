"""Ray-casting inverse sensor models for lidar (rays) and radar (cones).

Cell semantics are pinned so tests can check them against brute-force
reference computations:

* Lidar: rays are cast on the full-circle bearing table; every cell a ray
  segment passes through before its first detection cell is free. Free cells
  are exactly [m_free_ray, 0, 1 - m_free_ray], detection cells exactly
  [0, m_occ, 1 - m_occ], everything else stays vacuous.
* Radar: each in-range detection spawns a cone from its recording-time
  sensor position to the detection. The far cap of every cone (the arc at
  the detection's range spanning the cone angle) acts as a temporary
  occluder: a fan of sub-cell-spaced rays marches each cone and each ray
  stops early where it first crosses another cone's cap arc, so free space
  is never carved through a surface some other cone detected. The caps
  themselves are never written to the output; detection cells are occupied
  afterwards. Cones from all scans of an update window merge into one grid,
  so one measurement epoch enters the map once; a cell that is both
  traversed and detected resolves to occupied.

All traversal geometry is evaluated in cell units (see _kernels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import march_rays
from .evidence import FREE, OCC, UNK
from .grid import LIDAR, RADAR, EvidenceGrid, GridGeometry, Scan, bin_points, vacuous_data

# adjacent fan rays are at most this many cells apart at the cone's far end
FAN_SPACING_CELLS = 0.5


@dataclass(frozen=True)
class RayIlmParams:
    """Inverse lidar model parameters."""

    z_min: float = 0.3
    z_max: float = 3.0
    angular_resolution_deg: float = 0.2
    max_range: float = 15.0
    m_occ_detection: float = 0.5
    m_free_ray: float = 0.05

    def __post_init__(self):
        if not self.z_min < self.z_max:
            raise ValueError("z_min must be below z_max")
        if not self.angular_resolution_deg > 0.0:
            raise ValueError("angular resolution must be positive")
        if not (0.0 < self.m_occ_detection < 1.0 and 0.0 < self.m_free_ray < 1.0):
            raise ValueError("cell masses must lie in (0, 1)")


@dataclass(frozen=True)
class RayIrmParams:
    """Inverse radar model parameters.

    The model's own max range is not tied to the lidar's; detections beyond
    it are ignored entirely.
    """

    history_depth: int = 10
    cone_angle_deg: float = 2.0
    m_free_cone: float = 0.3
    m_occ_detection: float = 0.5
    max_range: float = 20.0

    def __post_init__(self):
        if self.history_depth < 1:
            raise ValueError("history depth must be at least 1")
        if not self.cone_angle_deg > 0.0:
            raise ValueError("cone angle must be positive")


def ray_bearings(angular_resolution_deg: float) -> np.ndarray:
    """The shared full-circle bearing table, in radians."""
    n = int(round(360.0 / angular_resolution_deg))
    return np.arange(n) * (2.0 * math.pi / n)


def cell_units(geometry: GridGeometry, points_xy: np.ndarray) -> np.ndarray:
    """Metric points to continuous grid coordinates (col-axis, row-axis)."""
    pts = np.atleast_2d(np.asarray(points_xy, dtype=np.float64))
    out = np.empty_like(pts)
    out[:, 0] = (pts[:, 0] - geometry.origin_x) / geometry.resolution
    out[:, 1] = (pts[:, 1] - geometry.origin_y) / geometry.resolution
    return out


def _paint(free_mask, occ_mask, m_free, m_occ, geometry) -> EvidenceGrid:
    # a cell that is both ray-free and a detection resolves to occupied
    data = vacuous_data(geometry.height, geometry.width)
    free_only = free_mask.astype(bool) & ~occ_mask
    data[free_only, FREE] = m_free
    data[free_only, UNK] = 1.0 - m_free
    data[occ_mask, OCC] = m_occ
    data[occ_mask, UNK] = 1.0 - m_occ
    return EvidenceGrid(geometry, data)


def ray_ilm(scan: Scan, params: RayIlmParams, geometry: GridGeometry) -> EvidenceGrid:
    """Inverse lidar model: full-circle rays stopped by detection cells."""
    if scan.sensor_kind != LIDAR:
        raise ValueError(f"ray_ilm needs a lidar scan, got {scan.sensor_kind!r}")
    if scan.z is not None and scan.points.shape[0]:
        keep = (scan.z >= params.z_min) & (scan.z <= params.z_max)
        points = scan.points[keep]
    else:
        points = scan.points
    world_pts = scan.sensor_pose.apply(points) if points.shape[0] else points
    counts = bin_points(world_pts, geometry)
    det_mask = counts > 0

    sensor_cell = geometry.cell_of(scan.sensor_pose.x, scan.sensor_pose.y)
    if not geometry.contains_cell(*sensor_cell):
        raise ValueError(f"sensor pose at cell {sensor_cell} is outside the grid")

    u0, v0 = cell_units(geometry, [[scan.sensor_pose.x, scan.sensor_pose.y]])[0]
    bearings = ray_bearings(params.angular_resolution_deg)
    n = bearings.shape[0]
    free_mask = np.zeros((geometry.height, geometry.width), dtype=np.uint8)
    march_rays(
        free_mask,
        det_mask.astype(np.uint8),
        np.full(n, u0),
        np.full(n, v0),
        np.cos(bearings),
        np.sin(bearings),
        np.full(n, params.max_range / geometry.resolution),
    )
    return _paint(free_mask, det_mask, params.m_free_ray, params.m_occ_detection, geometry)


@dataclass(frozen=True)
class Wedge:
    """One radar cone in cell units: apex, radial extent, center bearing."""

    apex_x: float
    apex_y: float
    range_cells: float
    bearing: float
    half_angle: float

    def fan_bearings(self) -> np.ndarray:
        arc = 2.0 * self.half_angle * self.range_cells
        n = max(2, int(math.ceil(arc / FAN_SPACING_CELLS)) + 1)
        return np.linspace(self.bearing - self.half_angle, self.bearing + self.half_angle, n)

    def cap_edges(self) -> tuple[float, float, float, float]:
        """Direction vectors of the angular span limits (right, left)."""
        return (
            math.cos(self.bearing - self.half_angle),
            math.sin(self.bearing - self.half_angle),
            math.cos(self.bearing + self.half_angle),
            math.sin(self.bearing + self.half_angle),
        )


def build_wedges(scans, params: RayIrmParams, geometry: GridGeometry):
    """Cone geometry for an update window, in cell units.

    Returns (wedges, det_cells): one wedge per in-range detection, and the
    (rows, cols) of all in-range detections that fall inside the grid.
    """
    half = math.radians(params.cone_angle_deg) / 2.0
    max_range_cells = params.max_range / geometry.resolution
    wedges: list[Wedge] = []
    det_rows, det_cols = [], []
    for scan in scans[-params.history_depth :]:
        if scan.sensor_kind != RADAR:
            raise ValueError(f"ray_irm needs radar scans, got {scan.sensor_kind!r}")
        if scan.points.shape[0] == 0:
            continue
        apex = cell_units(geometry, [[scan.sensor_pose.x, scan.sensor_pose.y]])[0]
        dets = cell_units(geometry, scan.world_points())
        for du, dv in dets - apex:
            rng = math.hypot(du, dv)
            if rng == 0.0 or rng > max_range_cells:
                continue
            wedges.append(Wedge(apex[0], apex[1], rng, math.atan2(dv, du), half))
            row = int(math.floor(apex[1] + dv))
            col = int(math.floor(apex[0] + du))
            if geometry.contains_cell(row, col):
                det_rows.append(row)
                det_cols.append(col)
    return wedges, (np.array(det_rows, dtype=np.int64), np.array(det_cols, dtype=np.int64))


def cap_arcs(wedges: list[Wedge]) -> np.ndarray:
    """Cap-arc table (N, 7): apex x/y, radius, right/left edge directions."""
    if not wedges:
        return np.zeros((0, 7))
    rows = []
    for w in wedges:
        erx, ery, elx, ely = w.cap_edges()
        rows.append((w.apex_x, w.apex_y, w.range_cells, erx, ery, elx, ely))
    return np.array(rows, dtype=np.float64)


def _arc_bboxes(arcs: np.ndarray) -> np.ndarray:
    """Conservative (x0, y0, x1, y1) bounds of each cap arc."""
    ax = np.stack([arcs[:, 0] + arcs[:, 2] * arcs[:, 3], arcs[:, 0] + arcs[:, 2] * arcs[:, 5]])
    ay = np.stack([arcs[:, 1] + arcs[:, 2] * arcs[:, 4], arcs[:, 1] + arcs[:, 2] * arcs[:, 6]])
    pad = 1.0 + arcs[:, 2] * 2e-4  # covers the arc bulge between its endpoints
    return np.stack([ax.min(0) - pad, ay.min(0) - pad, ax.max(0) + pad, ay.max(0) + pad], axis=1)


def _wedge_bbox(w: Wedge) -> np.ndarray:
    erx, ery, elx, ely = w.cap_edges()
    xs = (w.apex_x, w.apex_x + w.range_cells * erx, w.apex_x + w.range_cells * elx)
    ys = (w.apex_y, w.apex_y + w.range_cells * ery, w.apex_y + w.range_cells * ely)
    pad = 1.0 + w.range_cells * 2e-4
    return np.array([min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad])


def ray_stops(wedge: Wedge, dirs: np.ndarray, arcs: np.ndarray) -> np.ndarray:
    """Per-ray march limits: the wedge range, cut where a cap arc is crossed.

    ``dirs`` is (N, 2) unit directions from the wedge apex; ``arcs`` is the
    cap table restricted to candidates. A crossing counts when it lies
    strictly between the apex and the current limit and its bearing from the
    arc's own apex falls inside the arc's span (edge directions inclusive).
    """
    stops = np.full(dirs.shape[0], wedge.range_cells)
    if arcs.shape[0] == 0:
        return stops
    px, py = wedge.apex_x, wedge.apex_y
    w = arcs[:, 0:2] - np.array([px, py])  # (M, 2) apex -> arc center
    b = dirs @ w.T  # (N, M)
    cc = (w[:, 0] ** 2 + w[:, 1] ** 2) - arcs[:, 2] ** 2  # (M,)
    disc = b * b - cc[None, :]
    sq = np.sqrt(np.maximum(disc, 0.0))
    for roots in (b - sq, b + sq):
        hx = px + roots * dirs[:, 0:1] - arcs[None, :, 0]
        hy = py + roots * dirs[:, 1:2] - arcs[None, :, 1]
        on_arc = (
            (disc >= 0.0)
            & (roots > 1e-12)
            & (arcs[None, :, 3] * hy - arcs[None, :, 4] * hx >= 0.0)
            & (hx * arcs[None, :, 6] - hy * arcs[None, :, 5] >= 0.0)
        )
        candidate = np.where(on_arc, roots, np.inf).min(axis=1)
        stops = np.minimum(stops, candidate)
    return stops


def ray_irm(scans, params: RayIrmParams, geometry: GridGeometry) -> EvidenceGrid:
    """Inverse radar model over the last ``history_depth`` scans.

    Scans must already be expressed in the grid's frame (the current vehicle
    frame); each keeps its own recording-time sensor pose as the cone apex.
    An empty window yields a vacuous grid.
    """
    wedges, (det_rows, det_cols) = build_wedges(scans, params, geometry)
    occ_mask = np.zeros((geometry.height, geometry.width), dtype=bool)
    occ_mask[det_rows, det_cols] = True
    free_mask = np.zeros((geometry.height, geometry.width), dtype=np.uint8)
    if wedges:
        arcs = cap_arcs(wedges)
        boxes = _arc_bboxes(arcs)
        starts_x, starts_y, dirs_x, dirs_y, limits = [], [], [], [], []
        for w in wedges:
            x0, y0, x1, y1 = _wedge_bbox(w)
            cand = (
                (boxes[:, 0] <= x1)
                & (boxes[:, 2] >= x0)
                & (boxes[:, 1] <= y1)
                & (boxes[:, 3] >= y0)
            )
            bearings = w.fan_bearings()
            dirs = np.stack([np.cos(bearings), np.sin(bearings)], axis=1)
            stops = ray_stops(w, dirs, arcs[cand])
            starts_x.append(np.full(bearings.shape[0], w.apex_x))
            starts_y.append(np.full(bearings.shape[0], w.apex_y))
            dirs_x.append(dirs[:, 0])
            dirs_y.append(dirs[:, 1])
            limits.append(stops)
        no_dets = np.zeros((geometry.height, geometry.width), dtype=np.uint8)
        march_rays(
            free_mask,
            no_dets,
            np.concatenate(starts_x),
            np.concatenate(starts_y),
            np.concatenate(dirs_x),
            np.concatenate(dirs_y),
            np.concatenate(limits),
        )
    return _paint(free_mask, occ_mask, params.m_free_cone, params.m_occ_detection, geometry)
