"""Lightweight binary segmentation network with a self-contained
reverse-mode tensor engine."""

from .autodiff import Tensor, backward, no_grad
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .convops import BNState, ConvSpec, batchnorm2d, conv2d, deconv2d
from .losses import (AlphaSchedule, LossSpec, bce_loss, composite_loss,
                     dice_loss, jaccard_loss, parse_loss_label, total_loss)
from .metrics import ConfusionCounts, MetricReport, build_report, confusion, roc_auc
from .model import MiniNet, ModelConfig, count_parameters, shape_trace
from .optim import Adam
from .training import TrainConfig, RunLog, evaluate, run_ablation, train

__all__ = [
    "Adam", "AlphaSchedule", "BNState", "Checkpoint", "ConfusionCounts",
    "ConvSpec", "LossSpec", "MetricReport", "MiniNet", "ModelConfig",
    "RunLog", "Tensor", "TrainConfig", "backward", "batchnorm2d", "bce_loss",
    "build_report", "composite_loss", "confusion", "conv2d", "count_parameters",
    "deconv2d", "dice_loss", "evaluate", "jaccard_loss", "load_checkpoint",
    "no_grad", "parse_loss_label", "roc_auc", "run_ablation", "save_checkpoint",
    "shape_trace", "total_loss", "train",
]
