"""Boundary-guided crack segmentation with dual edge/body decoding."""

from .backbone import Backbone, BackboneConfig, PyramidFeatures
from .decoder import BGCrack, ModelConfig, PredictionPair
from .engine import TrainConfig, evaluate, train
from .losses import LossConfig, total_loss
from .metrics import MetricsReport, count_macs, count_params, mi_dice, mi_iou

__all__ = [
    "Backbone", "BackboneConfig", "PyramidFeatures",
    "BGCrack", "ModelConfig", "PredictionPair",
    "TrainConfig", "evaluate", "train",
    "LossConfig", "total_loss",
    "MetricsReport", "count_macs", "count_params", "mi_dice", "mi_iou",
]

__version__ = "0.1.0"
