"""Permutation-invariant neural watermark decoder."""

from .augment import augment
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .grouping import build_grouping, fps, knn_group
from .model import DecoderConfig, Decoder, bce_loss, build_decoder, predict_logits
from .trainer import Sample, TrainConfig, evaluate, train

__all__ = [
    "Checkpoint", "Decoder", "DecoderConfig", "Sample", "TrainConfig", "augment", "bce_loss",
    "build_decoder", "build_grouping", "evaluate", "fps", "knn_group", "load_checkpoint",
    "predict_logits", "save_checkpoint", "train",
]
