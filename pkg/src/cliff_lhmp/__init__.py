"""Flow-field maps of pedestrian dynamics and map-biased long-term motion prediction."""

from .core import (
    CliffCell,
    CliffMap,
    InvalidDistributionError,
    Swgmm,
    Swnd,
    Velocity,
    sample_swgmm,
    swgmm_pdf,
    swnd_pdf,
    wrap_2pi,
    wrap_angle,
)
from .evaluation import MetricsRow, ade, evaluate, fde, sweep, top_k
from .ingestion import (
    RawTrack,
    SplitTrajectory,
    State,
    Trajectory,
    derive_velocities,
    filter_and_split,
    parse,
    parse_atc,
    parse_canonical,
    parse_thor,
    prepare_trajectories,
    resample,
)
from .mapping import BuilderConfig, build_cliff_map, fit_swgmm, load_map, save_map
from .predictor import Prediction, PredictorConfig, cvm_predict, predict, predict_k, sample_direction

__version__ = "0.1.0"

__all__ = [
    "BuilderConfig",
    "CliffCell",
    "CliffMap",
    "InvalidDistributionError",
    "MetricsRow",
    "Prediction",
    "PredictorConfig",
    "RawTrack",
    "SplitTrajectory",
    "State",
    "Swgmm",
    "Swnd",
    "Trajectory",
    "Velocity",
    "ade",
    "build_cliff_map",
    "cvm_predict",
    "derive_velocities",
    "evaluate",
    "fde",
    "filter_and_split",
    "fit_swgmm",
    "load_map",
    "parse",
    "parse_atc",
    "parse_canonical",
    "parse_thor",
    "predict",
    "predict_k",
    "prepare_trajectories",
    "resample",
    "sample_direction",
    "sample_swgmm",
    "save_map",
    "sweep",
    "swgmm_pdf",
    "swnd_pdf",
    "top_k",
    "wrap_2pi",
    "wrap_angle",
]
