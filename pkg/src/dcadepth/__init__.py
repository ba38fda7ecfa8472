"""Monocular depth estimation with dilated cross attention, built on a small numpy autodiff core."""

from .losses import LOSS_PROFILES, MetricsReport, compute_metrics, consistency_score, total_loss, valid_mask
from .model import DepthModel, ModelConfig, build_model, model_forward, count_params, param_count, predict_flip_averaged
from .tensor import Tensor, backward, finite_diff_check, no_grad, precision

__version__ = "0.1.0"

__all__ = [
    "LOSS_PROFILES",
    "DepthModel",
    "MetricsReport",
    "ModelConfig",
    "Tensor",
    "backward",
    "build_model",
    "compute_metrics",
    "consistency_score",
    "finite_diff_check",
    "model_forward",
    "no_grad",
    "count_params",
    "param_count",
    "precision",
    "predict_flip_averaged",
    "total_loss",
    "valid_mask",
]
