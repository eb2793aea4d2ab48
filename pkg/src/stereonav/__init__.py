"""Stereo-aware waypoint navigation at desk scale.

A numpy-based library covering the full pipeline: a differentiable policy
with tracking-guided attention, stereo and monocular depth tokenization,
synthetic demonstration episodes, navigation metrics, a closed-loop 2D
simulator with A* route planning, and an HTTP waypoint-serving endpoint.
"""

from .episodes import (
    ClipMeta,
    EpisodeRecord,
    FilterVerdict,
    filter_clips,
    generate_dataset,
    generate_synthetic_episode,
    generate_training_mix,
    load_dataset,
    prepare_samples,
    save_dataset,
    window_episode,
)
from .evaluate import evaluate_model
from .metrics import EvalSample, MetricsReport, aggregate, arrival_accuracy, l2_error, maoe
from .perception import (
    DepthMap,
    FeatureExtractor,
    FrameFeatures,
    FrameObservation,
    PatchTokenGrid,
    SyntheticSceneProvider,
    TrackSet,
    disparity_to_depth,
)
from .policy import (
    ModelConfig,
    ObservationWindow,
    PolicyModel,
    PolicyOutput,
    TrainingSample,
    compact_config,
    composite_loss,
    direction_loss,
    fit,
    full_scale_config,
    tiny_config,
    train_step,
)
from .sim import OracleExpertPolicy, SubgoalController, ZeroPolicy, rollout, simulator_step
from .tensor import GradReport, Tensor, check_gradients
from .track_attention import TrackGuidedAttention
from .world import RobotState, WaypointGraph, World, astar_plan

__version__ = "0.1.0"

__all__ = [
    "ClipMeta", "EpisodeRecord", "FilterVerdict", "filter_clips",
    "generate_dataset", "generate_synthetic_episode", "generate_training_mix",
    "load_dataset", "prepare_samples", "save_dataset", "window_episode",
    "evaluate_model",
    "EvalSample", "MetricsReport", "aggregate", "arrival_accuracy", "l2_error", "maoe",
    "DepthMap", "FeatureExtractor", "FrameFeatures", "FrameObservation",
    "PatchTokenGrid", "SyntheticSceneProvider", "TrackSet", "disparity_to_depth",
    "ModelConfig", "ObservationWindow", "PolicyModel", "PolicyOutput",
    "TrainingSample", "compact_config", "composite_loss", "direction_loss",
    "fit", "full_scale_config", "tiny_config", "train_step",
    "OracleExpertPolicy", "SubgoalController", "ZeroPolicy", "rollout", "simulator_step",
    "GradReport", "Tensor", "check_gradients",
    "TrackGuidedAttention",
    "RobotState", "WaypointGraph", "World", "astar_plan",
]
