"""Context modelling: features, adaptive baseline, learned attention model."""

from olc.context.baseline import AdaptiveFrequencyModel, adaptive_baseline
from olc.context.checkpoint import load_checkpoint, save_checkpoint, weights_checksum
from olc.context.features import ContextWindow, NodeFeatures, extract_context, level_features, make_window
from olc.context.model import HEADS, ContextModel, ModelConfig, forward, rope_rotate
from olc.context.training import bce_loss, bce_loss_grad, train, train_steps

__all__ = [
    "AdaptiveFrequencyModel",
    "ContextModel",
    "ContextWindow",
    "HEADS",
    "ModelConfig",
    "NodeFeatures",
    "adaptive_baseline",
    "bce_loss",
    "bce_loss_grad",
    "extract_context",
    "forward",
    "level_features",
    "load_checkpoint",
    "make_window",
    "rope_rotate",
    "save_checkpoint",
    "train",
    "train_steps",
    "weights_checksum",
]
