"""Direction-based vehicle trajectory prediction on road networks."""

from .codec import (
    ContextFeatures,
    EncodedTrajectory,
    RevisionReport,
    assign_intervals,
    decode,
    encode,
    resolve_conflicts,
)
from .errors import (
    ConfigError,
    DataError,
    GraphError,
    InvalidDirectionError,
    NumericError,
    RoadTrajError,
)
from .metrics import MetricsReport, compute_metrics, edit_distance
from .model import ModelConfig, PredictionResult, TrajectoryModel
from .network import RoadNetwork, compute_headings, load_network
from .training import TrainConfig, TrainSample, segment, train

__all__ = [
    "ContextFeatures",
    "EncodedTrajectory",
    "RevisionReport",
    "assign_intervals",
    "decode",
    "encode",
    "resolve_conflicts",
    "ConfigError",
    "DataError",
    "GraphError",
    "InvalidDirectionError",
    "NumericError",
    "RoadTrajError",
    "MetricsReport",
    "compute_metrics",
    "edit_distance",
    "ModelConfig",
    "PredictionResult",
    "TrajectoryModel",
    "RoadNetwork",
    "compute_headings",
    "load_network",
    "TrainConfig",
    "TrainSample",
    "segment",
    "train",
]

__version__ = "0.1.0"
