"""Keypoint-guided viewpoint estimation, end to end on the desk.

Click one keypoint on an image of a rendered vehicle, name it, and a small
convolutional network predicts the camera's azimuth, elevation, and
in-plane tilt. The keypoint drives a learned attention map over conv
activation columns; everything from the autodiff tensors to the synthetic
data renderer lives in this package.
"""

from .geometry import (
    ViewpointLabel,
    circular_bin_distance,
    geodesic_distance,
    rotation_from_viewpoint,
    structure_aware_loss,
)
from .keypoints import (
    chebyshev_map,
    euclidean_map,
    gaussian_map,
    keypoint_map,
    manhattan_map,
    one_hot_class,
    perturb_keypoint,
)
from .metrics import acc_at, acc_curve_nauc, med_err
from .model import (
    ModelConfig,
    Prediction,
    VARIANTS,
    default_config,
    fixed_attention_map,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .optim import Adam
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ModelConfig",
    "Prediction",
    "Tensor",
    "VARIANTS",
    "ViewpointLabel",
    "acc_at",
    "acc_curve_nauc",
    "chebyshev_map",
    "circular_bin_distance",
    "default_config",
    "euclidean_map",
    "fixed_attention_map",
    "gaussian_map",
    "geodesic_distance",
    "init_params",
    "keypoint_map",
    "load_checkpoint",
    "manhattan_map",
    "med_err",
    "one_hot_class",
    "perturb_keypoint",
    "predict",
    "rotation_from_viewpoint",
    "save_checkpoint",
    "structure_aware_loss",
]
