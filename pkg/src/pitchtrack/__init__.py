"""Soccer player and ball tracking from file-based detections."""
from .ball import BallSource, BallTrack, ball_pipeline
from .config import (
    AssociationWeights,
    BallParams,
    KalmanParams,
    MergeConfig,
    PipelineConfig,
    TrackerParams,
    load_config,
)
from .core import BBox, Detection, Measurement, ObjectClass, Tracklet, cosine_similarity, iou
from .errors import ConfigError, InputError, NumericalError, PitchTrackError
from .metrics import EvalReport, compute_hota, compute_hota_multi
from .postprocess import boundary_merge, gsi_smooth, link_tracklets, refine
from .tracker import Tracker, run_sequence

__version__ = "0.1.0"

__all__ = [
    "AssociationWeights",
    "BBox",
    "BallParams",
    "BallSource",
    "BallTrack",
    "ConfigError",
    "Detection",
    "EvalReport",
    "InputError",
    "KalmanParams",
    "Measurement",
    "MergeConfig",
    "NumericalError",
    "ObjectClass",
    "PipelineConfig",
    "PitchTrackError",
    "Tracker",
    "TrackerParams",
    "Tracklet",
    "ball_pipeline",
    "boundary_merge",
    "compute_hota",
    "compute_hota_multi",
    "cosine_similarity",
    "gsi_smooth",
    "iou",
    "link_tracklets",
    "load_config",
    "refine",
    "run_sequence",
]
