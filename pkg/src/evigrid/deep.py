"""Data-driven ISM slot: prediction ingestion, a parametric surrogate
predictor, and the redundancy-aware integration of predictions into the map.

Integration treats the unknown mass as the information measure. A prediction
first gets its unknown mass floored (so purely data-driven cells stay
distinguishable), is then discounted by a factor derived from how much
unknown mass it would remove from the map, and finally fused with Yager's
rule so conflicting predictions recuperate unknown mass instead of fighting
head-on. Cells whose unknown mass already sits at or below the floor are
exact fixed points: the floored prediction can never look more informed than
them, so its discount factor is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .evidence import (
    FREE,
    OCC,
    UNK,
    MassFunction,
    conflict,
    conflict_nd,
    discount,
    discount_nd,
    limit_unknown,
    limit_unknown_nd,
    yager_combine,
    yager_nd,
)
from .grid import EvidenceGrid, GridGeometry, _run_row_chunks, bin_points, vacuous_data
from .io import EvgrFormatError, read_planes

GAMMA_MODES = ("paper", "exact")


@dataclass(frozen=True)
class FusionParams:
    """Knobs of the prediction-integration operator.

    ``gamma_bound_mode`` selects the discount-factor bound: "paper" uses the
    published closed form, which treats the map/prediction conflict as if it
    were unaffected by discounting; "exact" accounts for the discount scaling
    that conflict and provably keeps the fused unknown mass at or above the
    floor, so it is the default.
    """

    unknown_floor: float = 0.3
    tanh_gain: float = 10.0
    accumulation_window: int = 10
    gamma_bound_mode: str = "exact"

    def __post_init__(self):
        if not 0.0 < self.unknown_floor < 1.0:
            raise ValueError("unknown floor must lie in (0, 1)")
        if not self.tanh_gain > 0.0:
            raise ValueError("tanh gain must be positive")
        if self.accumulation_window < 1:
            raise ValueError("accumulation window must be at least 1")
        if self.gamma_bound_mode not in GAMMA_MODES:
            raise ValueError(f"gamma mode must be one of {GAMMA_MODES}")


@dataclass(frozen=True)
class SurrogateParams:
    """Stand-in predictor mimicking a trained network, failure modes included.

    ``certainty_cap`` is where the predicted unknown mass levels off far from
    detections; anything below 1.0 leaves residual committed mass in areas the
    sensor never confirmed. ``detail_loss_scale`` blurs the world labels that
    low-certainty cells are predicted from, reproducing how far-field
    interpolation loses small structures. ``occupied_bias`` shifts committed
    mass between the classes. ``rng_seed`` is reserved for stochastic
    variants; the shipped surrogate is deterministic.
    """

    certainty_cap: float = 1.0
    decay_length: float = 2.0
    occupied_bias: float = 0.0
    detail_loss_scale: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.certainty_cap <= 1.0:
            raise ValueError("certainty cap must lie in (0, 1]")
        if not self.decay_length > 0.0:
            raise ValueError("decay length must be positive")
        if not -1.0 <= self.occupied_bias <= 1.0:
            raise ValueError("occupied bias must lie in [-1, 1]")
        if self.detail_loss_scale < 0.0:
            raise ValueError("detail loss scale must be non-negative")


def delta_unknown(map_cell: MassFunction, prediction_cell: MassFunction) -> float:
    """Unknown mass the prediction would remove from the map cell.

    Positive when the prediction is more informed than the map.
    """
    return map_cell.m_u - prediction_cell.m_u


def compute_gamma(
    map_cell: MassFunction, limited_prediction: MassFunction, params: FusionParams
) -> float:
    """Discount factor for a floored prediction against the current cell.

    Zero whenever the prediction carries no new information (its unknown
    mass is not below the cell's). Otherwise the tanh ramp of the unknown
    mass difference, capped by the floor-preservation bound of the selected
    mode.
    """
    mu = map_cell.m_u
    pu = limited_prediction.m_u
    if mu <= pu:
        return 0.0
    ramp = math.tanh(params.tanh_gain * (mu - pu))
    k = conflict(map_cell, limited_prediction)
    if params.gamma_bound_mode == "paper":
        bound = (mu + k - params.unknown_floor) / (mu * (1.0 - pu))
    else:
        denom = mu * (1.0 - pu) - k
        bound = (mu - params.unknown_floor) / denom if denom > 0.0 else math.inf
    return min(max(min(bound, ramp), 0.0), 1.0)


def integrate_prediction(
    map_cell: MassFunction, raw_prediction: MassFunction, params: FusionParams
) -> MassFunction:
    """Floor, discount, and Yager-fuse one prediction into one map cell.

    When the discount factor is zero the input cell object is returned
    unchanged, keeping no-information updates exact fixed points.
    """
    limited = limit_unknown(raw_prediction, params.unknown_floor)
    gamma = compute_gamma(map_cell, limited, params)
    if gamma == 0.0:
        return map_cell
    return yager_combine(map_cell, discount(gamma, limited))


def compute_gamma_nd(
    map_data: np.ndarray, limited_data: np.ndarray, params: FusionParams
) -> np.ndarray:
    """Vectorized discount factors; see :func:`compute_gamma`."""
    mu = map_data[..., UNK]
    pu = limited_data[..., UNK]
    new_info = mu > pu
    ramp = np.tanh(params.tanh_gain * np.maximum(0.0, mu - pu))
    k = conflict_nd(map_data, limited_data)
    if params.gamma_bound_mode == "paper":
        numer = mu + k - params.unknown_floor
        denom = mu * (1.0 - pu)
    else:
        numer = mu - params.unknown_floor
        denom = mu * (1.0 - pu) - k
    positive = denom > 0.0
    bound = np.where(positive, numer / np.where(positive, denom, 1.0), np.inf)
    gamma = np.clip(np.minimum(bound, ramp), 0.0, 1.0)
    gamma[~new_info] = 0.0
    return gamma


def integrate_grid(
    map_grid: EvidenceGrid,
    prediction: EvidenceGrid,
    params: FusionParams,
    workers: int = 1,
):
    """In-place prediction integration over a whole grid.

    Per-cell and order-independent; cells with a zero discount factor are
    not touched at all, so never-informed cells keep their exact bits.
    """
    if not map_grid.geometry.same_layout(prediction.geometry):
        raise ValueError("map/prediction geometry mismatch")

    def kernel(rows: slice):
        m = map_grid.data[rows]
        limited = limit_unknown_nd(prediction.data[rows], params.unknown_floor)
        gamma = compute_gamma_nd(m, limited, params)
        active = gamma > 0.0
        if not np.any(active):
            return
        fused = yager_nd(m, discount_nd(gamma, limited))
        m[active] = fused[active]

    _run_row_chunks(kernel, map_grid.data, workers, map_grid.geometry.height)


def replace_grid(map_grid: EvidenceGrid, prediction: EvidenceGrid, params: FusionParams):
    """Floored-replacement update: overwrite cells the prediction knows better.

    A cell is overwritten by the floored prediction wherever that floored
    prediction has strictly lower unknown mass than the cell.
    """
    if not map_grid.geometry.same_layout(prediction.geometry):
        raise ValueError("map/prediction geometry mismatch")
    limited = limit_unknown_nd(prediction.data, params.unknown_floor)
    mask = limited[..., UNK] < map_grid.data[..., UNK]
    map_grid.data[mask] = limited[mask]


def surrogate_predict(
    accumulated_scans,
    world,
    params: SurrogateParams,
    geometry: GridGeometry,
    grid_in_world=None,
) -> EvidenceGrid:
    """Predict per-cell evidence from ground truth, detections, and bias.

    Certainty falls off exponentially with distance to the nearest
    accumulated detection and levels off at the certainty cap; committed
    mass is split between the classes by the (possibly blurred) world label
    and then shifted by the occupied bias. ``grid_in_world`` is the pose of
    the prediction grid's frame in world coordinates (for vehicle-frame
    grids); scans must already be expressed in the grid frame.
    """
    counts = np.zeros((geometry.height, geometry.width), dtype=np.int64)
    for scan in accumulated_scans:
        if scan.points.shape[0]:
            counts += bin_points(scan.world_points(), geometry)
    det = counts > 0

    if np.any(det):
        dist_cells = ndimage.distance_transform_edt(~det)
        c = np.exp(-(dist_cells * geometry.resolution) / params.decay_length)
    else:
        c = np.zeros((geometry.height, geometry.width))

    m_u = np.minimum(params.certainty_cap, 1.0 - c)
    committed = 1.0 - m_u

    exact = world.occupancy(geometry, grid_in_world).astype(np.float64)
    if params.detail_loss_scale > 0.0:
        size = max(1, int(round(params.detail_loss_scale / geometry.resolution)))
        coarse = (ndimage.uniform_filter(exact, size=size) > 0.5).astype(np.float64)
    else:
        coarse = exact
    occ_frac = c * exact + (1.0 - c) * coarse

    m_o0 = committed * occ_frac
    m_f0 = committed * (1.0 - occ_frac)
    beta = params.occupied_bias
    if beta >= 0.0:
        m_f = (1.0 - beta) * m_f0
        m_o = m_o0 + beta * m_f0
    else:
        m_f = m_f0 - beta * m_o0
        m_o = (1.0 + beta) * m_o0

    data = vacuous_data(geometry.height, geometry.width)
    data[..., FREE] = m_f
    data[..., OCC] = m_o
    data[..., UNK] = 1.0 - m_f - m_o
    return EvidenceGrid(geometry, data)


def load_prediction(path, geometry: GridGeometry) -> EvidenceGrid:
    """Read a prediction grid dump; two-plane evidence files are converted.

    The file geometry must match the expected one (up to float32 storage
    rounding of resolution and origin).
    """
    file_geom, planes = read_planes(path)
    if (file_geom.width, file_geom.height) != (geometry.width, geometry.height):
        raise EvgrFormatError(
            f"{path}: grid is {file_geom.width}x{file_geom.height}, "
            f"expected {geometry.width}x{geometry.height}"
        )
    for name, got, want in (
        ("resolution", file_geom.resolution, geometry.resolution),
        ("origin_x", file_geom.origin_x, geometry.origin_x),
        ("origin_y", file_geom.origin_y, geometry.origin_y),
    ):
        if np.float32(got) != np.float32(want):
            raise EvgrFormatError(f"{path}: {name} is {got}, expected {want}")
    if planes.shape[0] == 3:
        data = np.moveaxis(planes.astype(np.float64), 0, -1)
        s = data.sum(axis=-1)
        if np.any(np.abs(s - 1.0) > 1e-3) or np.any(planes < -1e-6):
            raise EvgrFormatError(f"{path}: mass planes do not form valid mass functions")
        data /= s[..., None]
        return EvidenceGrid(geometry, np.ascontiguousarray(data))
    e_f = planes[0].astype(np.float64)
    e_o = planes[1].astype(np.float64)
    if np.any(e_f < 0.0) or np.any(e_o < 0.0):
        raise EvgrFormatError(f"{path}: negative evidence counts")
    s = 2.0 + e_f + e_o
    data = np.stack([e_f / s, e_o / s, 2.0 / s], axis=-1)
    return EvidenceGrid(geometry, np.ascontiguousarray(data))
