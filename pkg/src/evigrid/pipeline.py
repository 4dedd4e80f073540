"""Mapping variants over a recording, evaluation, and rendering.

Each variant folds scan epochs into a world-frame map. Per-scan ISM grids
and predictions are produced in the current vehicle frame and resampled into
the world frame before fusion; within an epoch the data-driven update runs
before the geometric one, so geometry gets the last word on every cell it
reaches.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from .deep import FusionParams, SurrogateParams, integrate_grid, load_prediction, replace_grid, surrogate_predict
from .evidence import FREE, OCC, UNK
from .geometric import RayIlmParams, RayIrmParams, ray_ilm, ray_irm
from .grid import (
    LIDAR,
    RADAR,
    EvidenceGrid,
    GridGeometry,
    Pose2D,
    Scan,
    fuse_grid,
    transform_grid,
)
from .io import Recording
from .simulator import World


class MappingVariant(str, Enum):
    RayIlmDempster = "RayIlmDempster"
    DeepIrmAccumulated = "DeepIrmAccumulated"
    DeepIrmReplace = "DeepIrmReplace"
    DeepIrmDiscounted = "DeepIrmDiscounted"
    RayIrmDempster = "RayIrmDempster"
    FusedIrm = "FusedIrm"


DEEP_VARIANTS = {
    MappingVariant.DeepIrmAccumulated,
    MappingVariant.DeepIrmReplace,
    MappingVariant.DeepIrmDiscounted,
    MappingVariant.FusedIrm,
}
RADAR_VARIANTS = DEEP_VARIANTS | {MappingVariant.RayIrmDempster}


class SurrogateSource:
    """Prediction source backed by the parametric ground-truth surrogate."""

    def __init__(self, world: World, params: SurrogateParams):
        self.world = world
        self.params = params

    def predict(
        self, epoch: int, window: list[Scan], grid_pose: Pose2D, geometry: GridGeometry
    ) -> EvidenceGrid:
        return surrogate_predict(window, self.world, self.params, geometry, grid_pose)


class FileSource:
    """Prediction source reading per-epoch EVGR dumps (vehicle frame).

    Files are named ``epoch_%04d.evgr`` by radar epoch index.
    """

    def __init__(self, directory):
        self.directory = Path(directory)

    def predict(
        self, epoch: int, window: list[Scan], grid_pose: Pose2D, geometry: GridGeometry
    ) -> EvidenceGrid:
        return load_prediction(self.directory / f"epoch_{epoch:04d}.evgr", geometry)


def vehicle_geometry(map_geometry: GridGeometry) -> GridGeometry:
    """Vehicle-centered grid with the map's cell layout."""
    return GridGeometry(
        map_geometry.width,
        map_geometry.height,
        map_geometry.resolution,
        -0.5 * map_geometry.width * map_geometry.resolution,
        -0.5 * map_geometry.height * map_geometry.resolution,
        frame_id="vehicle",
    )


def _in_frame(scan: Scan, frame: Pose2D) -> Scan:
    """Re-express a scan's pose relative to another frame."""
    rel = frame.inverse().compose(scan.sensor_pose)
    return Scan(scan.timestamp, rel, scan.sensor_kind, scan.sensor_id, scan.points, scan.z)


class MappingSession:
    """Incremental mapping of one recording under one variant.

    ``geometry_written`` accumulates the world-frame cells that received a
    non-vacuous geometric (ray IRM) update; instrumented checks use it to
    separate ray-verified cells from purely data-driven ones.
    """

    def __init__(
        self,
        recording: Recording,
        variant: MappingVariant,
        fusion: FusionParams = None,
        ilm: RayIlmParams = None,
        irm: RayIrmParams = None,
        prediction_source=None,
        workers: int = 1,
    ):
        self.variant = MappingVariant(variant)
        self.fusion = fusion or FusionParams()
        self.ilm = ilm or RayIlmParams()
        self.irm = irm or RayIrmParams()
        self.workers = workers
        self.recording = recording
        self.map = EvidenceGrid(recording.geometry)
        self.veh_geometry = vehicle_geometry(recording.geometry)
        self.geometry_written = np.zeros(
            (recording.geometry.height, recording.geometry.width), dtype=bool
        )
        self._radar_window: list[Scan] = []
        self._radar_epoch = 0

        if self.variant in DEEP_VARIANTS and prediction_source is None:
            meta_world = recording.meta.get("world")
            if meta_world is None:
                raise ValueError("deep variants need a prediction source or recorded world")
            prediction_source = SurrogateSource(
                World(meta_world["extent"], meta_world["obstacles"]), SurrogateParams()
            )
        self.prediction_source = prediction_source

        kinds = {s.sensor_kind for s in recording.scans}
        if kinds:  # an empty recording maps to an empty epoch sequence
            if self.variant in RADAR_VARIANTS and RADAR not in kinds:
                raise ValueError(f"variant {self.variant.value} needs radar scans")
            if self.variant is MappingVariant.RayIlmDempster and LIDAR not in kinds:
                raise ValueError("RayIlmDempster needs lidar scans")

    def _fuse_geometric(self, update_veh: EvidenceGrid, vehicle_pose: Pose2D):
        world_update = transform_grid(update_veh, vehicle_pose, self.map.geometry)
        self.geometry_written |= world_update.data[..., UNK] != 1.0
        fuse_grid(self.map, world_update, "dempster", self.workers)

    def step(self, epoch_scans: list[Scan]):
        """Fold one scan epoch into the map."""
        lidar = [s for s in epoch_scans if s.sensor_kind == LIDAR]
        radar = [s for s in epoch_scans if s.sensor_kind == RADAR]

        if self.variant is MappingVariant.RayIlmDempster:
            for scan in lidar:
                pose = scan.sensor_pose
                ism = ray_ilm(_in_frame(scan, pose), self.ilm, self.veh_geometry)
                world_update = transform_grid(ism, pose, self.map.geometry)
                fuse_grid(self.map, world_update, "dempster", self.workers)
            return

        if not radar:
            return
        window_len = max(self.irm.history_depth, self.fusion.accumulation_window)
        self._radar_window.extend(radar)
        self._radar_window = self._radar_window[-window_len:]
        vehicle_pose = radar[0].sensor_pose
        window_veh = [_in_frame(s, vehicle_pose) for s in self._radar_window]

        if self.variant in DEEP_VARIANTS:
            pred_veh = self.prediction_source.predict(
                self._radar_epoch,
                window_veh[-self.fusion.accumulation_window :],
                self.veh_geometry,
            )
            pred_world = transform_grid(pred_veh, vehicle_pose, self.map.geometry)
            if self.variant is MappingVariant.DeepIrmAccumulated:
                fuse_grid(self.map, pred_world, "dempster", self.workers)
            elif self.variant is MappingVariant.DeepIrmReplace:
                replace_grid(self.map, pred_world, self.fusion)
            else:
                integrate_grid(self.map, pred_world, self.fusion, self.workers)

        if self.variant in (MappingVariant.RayIrmDempster, MappingVariant.FusedIrm):
            ism = ray_irm(window_veh[-self.irm.history_depth :], self.irm, self.veh_geometry)
            self._fuse_geometric(ism, vehicle_pose)
        self._radar_epoch += 1

    def run(self):
        """Generator over epochs, yielding the live map after each one.

        The yielded grid is the session's working map; copy it if you keep it.
        """
        for epoch_scans in self.recording.epochs():
            self.step(epoch_scans)
            yield self.map


def run_variant(
    recording: Recording,
    variant: MappingVariant,
    fusion: FusionParams = None,
    ilm: RayIlmParams = None,
    irm: RayIrmParams = None,
    prediction_source=None,
    workers: int = 1,
):
    """Map a recording under one variant, yielding the map after each epoch."""
    session = MappingSession(recording, variant, fusion, ilm, irm, prediction_source, workers)
    yield from session.run()


def final_map(recording: Recording, variant: MappingVariant, **kwargs) -> EvidenceGrid:
    session = MappingSession(recording, variant, **kwargs)
    for _ in session.run():
        pass
    return session.map


def classify(data: np.ndarray) -> np.ndarray:
    """Per-cell class: 0 free, 1 occupied, 2 unknown; ties go to unknown."""
    free = (data[..., FREE] > data[..., OCC]) & (data[..., FREE] > data[..., UNK])
    occ = (data[..., OCC] > data[..., FREE]) & (data[..., OCC] > data[..., UNK])
    out = np.full(data.shape[:-1], UNK, dtype=np.int8)
    out[free] = FREE
    out[occ] = OCC
    return out


def iou_scores(a: np.ndarray, b: np.ndarray) -> dict:
    """Per-class intersection over union of two class images, in percent.

    A class absent from both images scores 100 (the maps agree it is not
    there).
    """
    out = {}
    for cls, name in ((FREE, "free"), (OCC, "occupied"), (UNK, "unknown")):
        inter = np.count_nonzero((a == cls) & (b == cls))
        union = np.count_nonzero((a == cls) | (b == cls))
        out[name] = 100.0 * inter / union if union else 100.0
    return out


@dataclass
class EvalReport:
    """Per-class IoU of a variant's final map against a reference map."""

    variant: str
    config_hash: str
    miou: dict
    miou_ground_truth: dict = None
    per_epoch: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "config_hash": self.config_hash,
            "miou": self.miou,
            "miou_ground_truth": self.miou_ground_truth,
            "per_epoch": self.per_epoch,
        }

    @staticmethod
    def from_json(obj: dict) -> "EvalReport":
        try:
            return EvalReport(
                obj["variant"],
                obj["config_hash"],
                obj["miou"],
                obj.get("miou_ground_truth"),
                obj.get("per_epoch", []),
            )
        except KeyError as exc:
            raise ValueError(f"report is missing field {exc}") from exc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,free,occupied,unknown\n")
            for row in self.per_epoch:
                fh.write(f"{row['epoch']},{row['free']},{row['occupied']},{row['unknown']}\n")
            fh.write(
                f"final,{self.miou['free']},{self.miou['occupied']},{self.miou['unknown']}\n"
            )


def evaluate(
    map_grid: EvidenceGrid,
    reference: EvidenceGrid,
    variant: str = "",
    config_hash: str = "",
) -> EvalReport:
    """Headline per-class IoU of one map against a reference map."""
    if not map_grid.geometry.same_layout(reference.geometry):
        raise ValueError("map/reference geometry mismatch")
    scores = iou_scores(classify(map_grid.data), classify(reference.data))
    return EvalReport(variant, config_hash, scores)


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def render(map_grid: EvidenceGrid, path):
    """Write the map as a PNG: red free, green occupied, blue unknown.

    Mass-level float noise below 1e-6 is quantized away before half-up
    rounding so nominal values land on their nominal pixel levels. Row 0 of
    the grid is the bottom image row (y grows upward).
    """
    levels = np.floor(np.round(map_grid.data * 255.0, 6) + 0.5)
    rgb = np.clip(levels, 0, 255).astype(np.uint8)
    Image.fromarray(rgb[::-1], mode="RGB").save(path)
