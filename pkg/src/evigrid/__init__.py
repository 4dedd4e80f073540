"""Evidential occupancy mapping with redundancy-aware fusion of geometric
and data-driven inverse sensor models."""

from .evidence import (
    MassFunction,
    SubjectiveOpinion,
    TotalConflictError,
    VACUOUS,
    conflict,
    dempster_combine,
    discount,
    evidential_loss,
    limit_unknown,
    opinion_to_mass,
    pignistic_occupancy,
    yager_combine,
)
from .grid import EvidenceGrid, GridGeometry, Pose2D, Scan, fuse_cell, rasterize, transform_grid
from .geometric import RayIlmParams, RayIrmParams, ray_ilm, ray_irm
from .deep import (
    FusionParams,
    SurrogateParams,
    compute_gamma,
    delta_unknown,
    integrate_prediction,
    load_prediction,
    surrogate_predict,
)
from .simulator import RadarNoiseModel, ScenarioConfig, World, generate_scenario, simulate_lidar, simulate_radar
from .pipeline import EvalReport, MappingSession, MappingVariant, evaluate, render, run_variant

__version__ = "0.1.0"
