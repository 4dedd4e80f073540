"""Evidence grids with metric geometry and the per-cell fusion machinery.

Grids are dense row-major arrays of mass triples; cell (row, col) covers the
square [origin + col*res, origin + (col+1)*res) x [... row ...). Never-updated
cells stay bit-exactly vacuous, which downstream code relies on to tell
touched from untouched cells apart.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .evidence import (
    FREE,
    OCC,
    UNK,
    MassFunction,
    TotalConflictError,
    dempster_combine,
    dempster_nd,
    yager_combine,
    yager_nd,
)

LIDAR = "lidar"
RADAR = "radar"


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    t = math.fmod(theta, 2.0 * math.pi)
    if t <= -math.pi:
        t += 2.0 * math.pi
    elif t > math.pi:
        t -= 2.0 * math.pi
    return t


@dataclass(frozen=True)
class Pose2D:
    """Rigid transform in the plane: rotate by theta, then translate."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 2) points from the local frame into the parent frame."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        c, s = math.cos(self.theta), math.sin(self.theta)
        out = np.empty_like(pts)
        out[:, 0] = c * pts[:, 0] - s * pts[:, 1] + self.x
        out[:, 1] = s * pts[:, 0] + c * pts[:, 1] + self.y
        return out

    def inverse(self) -> "Pose2D":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(-(c * self.x + s * self.y), -(-s * self.x + c * self.y), -self.theta)

    def compose(self, other: "Pose2D") -> "Pose2D":
        """Pose of ``other`` chained after self (self ∘ other)."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    @property
    def is_identity(self) -> bool:
        return self.x == 0.0 and self.y == 0.0 and self.theta == 0.0


@dataclass(frozen=True)
class GridGeometry:
    """Cell layout of a grid: counts, metric resolution, world origin."""

    width: int
    height: int
    resolution: float
    origin_x: float = 0.0
    origin_y: float = 0.0
    frame_id: str = "world"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"grid dimensions must be positive: {self.width}x{self.height}")
        if not (self.resolution > 0.0 and math.isfinite(self.resolution)):
            raise ValueError(f"degenerate resolution: {self.resolution}")

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the cell containing a point; may be out of bounds."""
        return (
            int(math.floor((y - self.origin_y) / self.resolution)),
            int(math.floor((x - self.origin_x) / self.resolution)),
        )

    def contains_cell(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """World coordinates (X, Y) of all cell centers, each (H, W)."""
        xs = self.origin_x + (np.arange(self.width) + 0.5) * self.resolution
        ys = self.origin_y + (np.arange(self.height) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)

    def same_layout(self, other: "GridGeometry") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.resolution == other.resolution
            and self.origin_x == other.origin_x
            and self.origin_y == other.origin_y
        )


@dataclass
class EvidenceGrid:
    """Dense grid of mass triples plus its geometry."""

    geometry: GridGeometry
    data: np.ndarray = field(default=None)  # (H, W, 3) float64

    def __post_init__(self):
        if self.data is None:
            self.data = vacuous_data(self.geometry.height, self.geometry.width)
        expected = (self.geometry.height, self.geometry.width, 3)
        if self.data.shape != expected:
            raise ValueError(f"grid data shape {self.data.shape} != {expected}")

    def copy(self) -> "EvidenceGrid":
        return EvidenceGrid(self.geometry, self.data.copy())

    def cell(self, row: int, col: int) -> MassFunction:
        return MassFunction.from_array(self.data[row, col])


def vacuous_data(height: int, width: int) -> np.ndarray:
    data = np.zeros((height, width, 3), dtype=np.float64)
    data[..., UNK] = 1.0
    return data


@dataclass(frozen=True)
class Scan:
    """One sensor sweep: pose in the recording frame plus local detections."""

    timestamp: float
    sensor_pose: Pose2D
    sensor_kind: str
    sensor_id: int
    points: np.ndarray  # (N, 2) in the sensor frame
    z: np.ndarray = None  # (N,) detection heights; lidar only

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        if self.z is not None:
            zs = np.asarray(self.z, dtype=np.float64).reshape(-1)
            if zs.shape[0] != pts.shape[0]:
                raise ValueError("z length does not match point count")
            object.__setattr__(self, "z", zs)
        if self.sensor_kind not in (LIDAR, RADAR):
            raise ValueError(f"unknown sensor kind {self.sensor_kind!r}")
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("non-finite scan points")

    def world_points(self) -> np.ndarray:
        if self.points.shape[0] == 0:
            return self.points.copy()
        return self.sensor_pose.apply(self.points)


def bin_points(points_xy: np.ndarray, geometry: GridGeometry) -> np.ndarray:
    """Per-cell count of points; points outside the extent are dropped."""
    counts = np.zeros((geometry.height, geometry.width), dtype=np.int32)
    pts = np.asarray(points_xy, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        return counts
    cols = np.floor((pts[:, 0] - geometry.origin_x) / geometry.resolution).astype(np.int64)
    rows = np.floor((pts[:, 1] - geometry.origin_y) / geometry.resolution).astype(np.int64)
    ok = (rows >= 0) & (rows < geometry.height) & (cols >= 0) & (cols < geometry.width)
    np.add.at(counts, (rows[ok], cols[ok]), 1)
    return counts


def rasterize(scan: Scan, geometry: GridGeometry) -> np.ndarray:
    """Detection image of a scan in the grid frame (per-cell counts)."""
    return bin_points(scan.world_points(), geometry)


def transform_grid(src: EvidenceGrid, pose: Pose2D, dst_geometry: GridGeometry) -> EvidenceGrid:
    """Resample a grid into another frame/geometry by nearest neighbor.

    ``pose`` is the pose of the source grid's frame expressed in the
    destination frame. Destination cells whose pre-image falls outside the
    source extent become vacuous. Nearest-neighbor lookup keeps cell values
    exact; interpolating mass triples could manufacture conflict between
    neighbors.
    """
    if pose.is_identity and src.geometry.same_layout(dst_geometry):
        return EvidenceGrid(dst_geometry, src.data.copy())
    inv = pose.inverse()
    x, y = dst_geometry.cell_centers()
    c, s = math.cos(inv.theta), math.sin(inv.theta)
    sx = c * x - s * y + inv.x
    sy = s * x + c * y + inv.y
    g = src.geometry
    cols = np.floor((sx - g.origin_x) / g.resolution).astype(np.int64)
    rows = np.floor((sy - g.origin_y) / g.resolution).astype(np.int64)
    ok = (rows >= 0) & (rows < g.height) & (cols >= 0) & (cols < g.width)
    out = vacuous_data(dst_geometry.height, dst_geometry.width)
    out[ok] = src.data[rows[ok], cols[ok]]
    return EvidenceGrid(dst_geometry, out)


def fuse_cell(map_cell: MassFunction, update: MassFunction, rule: str) -> MassFunction:
    """Fuse one update into one map cell under the chosen combination rule.

    Total conflict under Dempster's rule leaves the map cell unchanged.
    """
    if rule == "dempster":
        try:
            return dempster_combine(map_cell, update)
        except TotalConflictError:
            return map_cell
    if rule == "yager":
        return yager_combine(map_cell, update)
    raise ValueError(f"unknown combination rule {rule!r}")


def env_workers(default: int = 1) -> int:
    """Worker cap from EVIGRID_THREADS, if set."""
    raw = os.environ.get("EVIGRID_THREADS", "")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


def _run_row_chunks(kernel, out: np.ndarray, workers: int, height: int):
    """Apply kernel(row_slice) over disjoint row chunks, optionally threaded.

    Chunks write disjoint slices of ``out``, so the result is independent of
    scheduling order and bit-identical to the serial run.
    """
    if workers <= 1 or height < 2 * workers:
        kernel(slice(0, height))
        return
    bounds = np.linspace(0, height, workers + 1).astype(int)
    chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(kernel, chunks))


def fuse_grid(map_grid: EvidenceGrid, update: EvidenceGrid, rule: str, workers: int = 1):
    """In-place per-cell fusion of an update grid into the map.

    Cell updates are independent; results do not depend on iteration order
    or on the number of workers.
    """
    if not map_grid.geometry.same_layout(update.geometry):
        raise ValueError("map/update geometry mismatch")
    if rule == "dempster":
        nd = dempster_nd
    elif rule == "yager":
        nd = yager_nd
    else:
        raise ValueError(f"unknown combination rule {rule!r}")

    def kernel(rows: slice):
        map_grid.data[rows] = nd(map_grid.data[rows], update.data[rows])

    _run_row_chunks(kernel, map_grid.data, workers, map_grid.geometry.height)
