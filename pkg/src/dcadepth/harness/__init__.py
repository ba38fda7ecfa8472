from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .optim import OptimizerState, adamw_step, lr_at_epoch
from .train import TrainConfig, evaluate, evaluate_frames, run_ablation, train

__all__ = [
    "Checkpoint",
    "OptimizerState",
    "TrainConfig",
    "adamw_step",
    "evaluate",
    "evaluate_frames",
    "load_checkpoint",
    "lr_at_epoch",
    "run_ablation",
    "save_checkpoint",
    "train",
]
