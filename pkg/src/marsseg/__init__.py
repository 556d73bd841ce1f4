"""MarsSeg: an encoder-decoder segmentation network for Martian terrain,
built on a small numpy autodiff core."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config
from .data import AugmentPolicy, SegmentationSample, augment, load_manifest
from .errors import MarsSegError
from .estimator import MarsSegSegmenter
from .gradcheck import finite_diff_check
from .losses import ClassWeightState, LossConfig, combined_loss, dice_loss, focal_loss, update_class_weights
from .metrics import ConfusionMatrix, EvalReport, iou_per_class, miou
from .network import MarsSegNet, NetworkConfig
from .optim import OptimConfig, OptimState, sgd_step
from .tensor import Tensor, no_grad
from .trainer import TrainResult, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy",
    "Checkpoint",
    "ClassWeightState",
    "ConfusionMatrix",
    "EvalReport",
    "LossConfig",
    "MarsSegError",
    "MarsSegNet",
    "MarsSegSegmenter",
    "NetworkConfig",
    "OptimConfig",
    "OptimState",
    "SegmentationSample",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "augment",
    "combined_loss",
    "dice_loss",
    "evaluate",
    "finite_diff_check",
    "focal_loss",
    "iou_per_class",
    "load_checkpoint",
    "load_config",
    "load_manifest",
    "miou",
    "no_grad",
    "save_checkpoint",
    "sgd_step",
    "train",
    "update_class_weights",
]
