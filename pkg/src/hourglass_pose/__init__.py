"""Hourglass encoder-decoder networks for camera pose regression, in numpy."""

from .errors import DataError, HourglassError, NumericalError
from .geometry import Pose, angular_error_deg, quat_normalize, quat_to_rotmat, rotmat_to_quat, translation_error_m
from .loss import LossParams, LossValue, batch_loss_and_grad, batch_pose_loss, pose_loss
from .model import HourglassPose, ModelConfig, PosePrediction, build_model, count_parameters, init_parameters
from .checkpoint import load_checkpoint, load_model, save_checkpoint
from .data import PreprocessConfig, SceneSplit, SceneStats, compute_scene_stats, generate_fixture_scene, scan_scene
from .training import TrainConfig, fit, beta_grid_search
from .pretrained import encoder_store_from_resnet
from .evaluation import cumulative_histogram, evaluate, median, plain_histogram, summarize

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "HourglassError",
    "HourglassPose",
    "LossParams",
    "LossValue",
    "ModelConfig",
    "NumericalError",
    "Pose",
    "PosePrediction",
    "PreprocessConfig",
    "SceneSplit",
    "SceneStats",
    "TrainConfig",
    "angular_error_deg",
    "batch_loss_and_grad",
    "batch_pose_loss",
    "beta_grid_search",
    "build_model",
    "compute_scene_stats",
    "count_parameters",
    "cumulative_histogram",
    "encoder_store_from_resnet",
    "evaluate",
    "fit",
    "generate_fixture_scene",
    "init_parameters",
    "load_checkpoint",
    "load_model",
    "median",
    "plain_histogram",
    "pose_loss",
    "quat_normalize",
    "quat_to_rotmat",
    "rotmat_to_quat",
    "save_checkpoint",
    "scan_scene",
    "summarize",
    "translation_error_m",
]
