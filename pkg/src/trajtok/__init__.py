"""trajtok: spatial action tokenization, robot-data curation, RL rewards and scaling-law fits."""

__version__ = "0.1.0"

from .geometry import DeltaAction, Pose, RobotState, rotation_distance, slerp
from .trajectory import Trajectory
from .waypoints import WaypointIndexSet, WaypointThresholds, extract_waypoints
from .tokenizer import ActionTokenSequence, MotionTokenLibrary, decode, encode, fit_library
from .datapipe import Episode, dedup, mirror_episode
from .scaling import ScalingParams, effective_data, fit as fit_scaling, predict_loss

__all__ = [
    "__version__",
    "ActionTokenSequence",
    "DeltaAction",
    "Episode",
    "MotionTokenLibrary",
    "Pose",
    "RobotState",
    "ScalingParams",
    "Trajectory",
    "WaypointIndexSet",
    "WaypointThresholds",
    "decode",
    "dedup",
    "effective_data",
    "encode",
    "extract_waypoints",
    "fit_library",
    "fit_scaling",
    "mirror_episode",
    "predict_loss",
    "rotation_distance",
    "slerp",
]
