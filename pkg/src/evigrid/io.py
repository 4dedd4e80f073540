"""File formats: EVGR grid dumps and scan recordings.

EVGR layout: a 32-byte little-endian header (magic ``EVGR``, width, height,
plane count, resolution, origin x/y, reserved word) followed by the planes as
raw float32, row-major. Evidence grids use three planes (m_f, m_o, m_u);
evidence-count files use two planes (e_f, e_o).

A recording directory holds ``scans.csv`` (one row per detection point, with
the owning scan's pose repeated) and ``meta.json`` (grid geometry, sensor
extrinsics, world description, ground-truth grid path). A scan that produced
no points still occupies one CSV row with empty point fields so the epoch is
preserved.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import EvidenceGrid, GridGeometry, Pose2D, Scan
from .evidence import is_normalized_nd

EVGR_MAGIC = b"EVGR"
_HEADER = struct.Struct("<4sIIIfffI")
assert _HEADER.size == 32

SCAN_COLUMNS = [
    "timestamp",
    "sensor_id",
    "sensor_kind",
    "pose_x",
    "pose_y",
    "pose_theta",
    "point_x",
    "point_y",
    "point_z",
]


class EvgrFormatError(IOError):
    """Malformed EVGR file; the message names the offending field."""


def write_planes(path, geometry: GridGeometry, planes: np.ndarray):
    """Write (P, H, W) planes as an EVGR file."""
    planes = np.asarray(planes, dtype=np.float32)
    if planes.ndim != 3 or planes.shape[1:] != (geometry.height, geometry.width):
        raise ValueError(f"planes shape {planes.shape} does not match geometry")
    header = _HEADER.pack(
        EVGR_MAGIC,
        geometry.width,
        geometry.height,
        planes.shape[0],
        np.float32(geometry.resolution),
        np.float32(geometry.origin_x),
        np.float32(geometry.origin_y),
        0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(planes.tobytes())


def read_planes(path) -> tuple[GridGeometry, np.ndarray]:
    """Read an EVGR file into (geometry, (P, H, W) float32 planes)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise EvgrFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, width, height, nplanes, res, ox, oy, _ = _HEADER.unpack_from(raw)
    if magic != EVGR_MAGIC:
        raise EvgrFormatError(f"{path}: bad magic {magic!r}")
    if width == 0 or height == 0:
        raise EvgrFormatError(f"{path}: zero grid dimension {width}x{height}")
    if nplanes not in (2, 3):
        raise EvgrFormatError(f"{path}: unsupported plane count {nplanes}")
    if not res > 0.0:
        raise EvgrFormatError(f"{path}: non-positive resolution {res}")
    expected = nplanes * width * height * 4
    payload = raw[_HEADER.size :]
    if len(payload) != expected:
        raise EvgrFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} "
            f"for {nplanes} planes of {width}x{height}"
        )
    planes = np.frombuffer(payload, dtype="<f4").reshape(nplanes, height, width)
    geometry = GridGeometry(width, height, float(res), float(ox), float(oy))
    return geometry, planes.copy()


def write_grid(path, grid: EvidenceGrid):
    """Dump an evidence grid as three EVGR planes (m_f, m_o, m_u)."""
    write_planes(path, grid.geometry, np.moveaxis(grid.data, -1, 0))


def read_grid(path) -> EvidenceGrid:
    """Load a three-plane EVGR file back into an evidence grid."""
    geometry, planes = read_planes(path)
    if planes.shape[0] != 3:
        raise EvgrFormatError(f"{path}: expected 3 mass planes, found {planes.shape[0]}")
    data = np.moveaxis(planes.astype(np.float64), 0, -1)
    if not np.all(is_normalized_nd(data, atol=1e-3)):
        raise EvgrFormatError(f"{path}: mass planes do not sum to 1")
    s = data.sum(axis=-1, keepdims=True)
    np.divide(data, s, out=data, where=s != 1.0)
    return EvidenceGrid(geometry, np.ascontiguousarray(data))


def geometry_to_json(geometry: GridGeometry) -> dict:
    return {
        "width": geometry.width,
        "height": geometry.height,
        "resolution": geometry.resolution,
        "origin": [geometry.origin_x, geometry.origin_y],
        "frame_id": geometry.frame_id,
    }


def geometry_from_json(obj: dict) -> GridGeometry:
    return GridGeometry(
        int(obj["width"]),
        int(obj["height"]),
        float(obj["resolution"]),
        float(obj["origin"][0]),
        float(obj["origin"][1]),
        str(obj.get("frame_id", "world")),
    )


@dataclass
class Recording:
    """A scan recording plus its metadata, as read from a directory."""

    path: Path
    meta: dict
    scans: list

    @property
    def geometry(self) -> GridGeometry:
        return geometry_from_json(self.meta["grid"])

    def epochs(self) -> list[list[Scan]]:
        """Scans grouped by timestamp, in time order."""
        groups: dict[float, list[Scan]] = {}
        for scan in self.scans:
            groups.setdefault(scan.timestamp, []).append(scan)
        return [groups[t] for t in sorted(groups)]

    def ground_truth(self) -> EvidenceGrid | None:
        name = self.meta.get("ground_truth")
        if not name:
            return None
        return read_grid(self.path / name)


def _fmt(value: float) -> str:
    return repr(float(value))


def write_recording(directory, scans: list[Scan], meta: dict):
    """Write scans.csv and meta.json; scans keep their given order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "scans.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCAN_COLUMNS)
        for scan in scans:
            pose = scan.sensor_pose
            base = [
                _fmt(scan.timestamp),
                str(scan.sensor_id),
                scan.sensor_kind,
                _fmt(pose.x),
                _fmt(pose.y),
                _fmt(pose.theta),
            ]
            if scan.points.shape[0] == 0:
                writer.writerow(base + ["", "", ""])
                continue
            zs = scan.z if scan.z is not None else np.zeros(scan.points.shape[0])
            for (px, py), pz in zip(scan.points, zs):
                writer.writerow(base + [_fmt(px), _fmt(py), _fmt(pz)])
    with open(directory / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_recording(directory) -> Recording:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    csv_path = directory / "scans.csv"
    if not meta_path.is_file():
        raise IOError(f"missing {meta_path}")
    if not csv_path.is_file():
        raise IOError(f"missing {csv_path}")
    with open(meta_path) as fh:
        meta = json.load(fh)

    scans: list[Scan] = []
    key = None
    points: list[tuple[float, float]] = []
    zs: list[float] = []

    def flush():
        if key is None:
            return
        ts, sid, kind, px, py, pth = key
        pts = np.array(points, dtype=np.float64).reshape(-1, 2)
        z = np.array(zs, dtype=np.float64) if kind == "lidar" else None
        scans.append(Scan(ts, Pose2D(px, py, pth), kind, sid, pts, z))

    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SCAN_COLUMNS:
            raise IOError(f"{csv_path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            row_key = (
                float(row["timestamp"]),
                int(row["sensor_id"]),
                row["sensor_kind"],
                float(row["pose_x"]),
                float(row["pose_y"]),
                float(row["pose_theta"]),
            )
            if row_key != key:
                flush()
                key = row_key
                points, zs = [], []
            if row["point_x"] != "":
                points.append((float(row["point_x"]), float(row["point_y"])))
                zs.append(float(row["point_z"]) if row["point_z"] != "" else 0.0)
    flush()

    timestamps = [s.timestamp for s in scans]
    if timestamps != sorted(timestamps):
        raise IOError(f"{csv_path}: timestamps not monotone")
    return Recording(directory, meta, scans)
