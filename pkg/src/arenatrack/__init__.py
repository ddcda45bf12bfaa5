"""arenatrack: multi-camera positional tracking toolkit.

Subpackages by layer: geometry (frames, rotations, projection), priors
(spherical anchor regions), codec (prediction-tensor encode/decode), loss
(training loss, gradient, toy fitter), syngen (annotation generation),
fusion + server (multi-camera aggregation and streaming service).
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .geometry import (
    CameraIntrinsics,
    CameraRig,
    CuboidSpec,
    EulerAngles,
    Pose,
    SphericalParams,
    Vec3,
)
from .priors import PriorTable, assign_region, compute_priors, default_region_table
from .codec import CodecConfig, DecodedDetection, PredictionTensors
from .loss import LossConfig, LossEvaluator, TrainSchedule, lr_at
from .syngen import ObjectAnnotation, ProfileConfig, load_profile, run_profile
from .fusion import DetectionMessage, FusedPosition, FusionTracker, run_tracker

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "CameraIntrinsics", "CameraRig", "CuboidSpec", "EulerAngles", "Pose",
    "SphericalParams", "Vec3",
    "PriorTable", "assign_region", "compute_priors", "default_region_table",
    "CodecConfig", "DecodedDetection", "PredictionTensors",
    "LossConfig", "LossEvaluator", "TrainSchedule", "lr_at",
    "ObjectAnnotation", "ProfileConfig", "load_profile", "run_profile",
    "DetectionMessage", "FusedPosition", "FusionTracker", "run_tracker",
    "__version__",
]
