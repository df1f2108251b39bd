"""Dual-mode speech encoder with online registers for chunk-wise streaming."""
from .encoder import DualModeEncoder, MaskingPlan, apply_time_mask, sinusoidal_pe
from .estimator import OnlineRegisterEncoder
from .layout import ChunkLayout, SlotKind, StreamConfig, assemble_online_input, build_layout
from .losses import contrastive_loss, future_prediction_loss, total_loss
from .masks import build_online_mask, build_online_mask_bruteforce
from .quantizer import GumbelQuantizer, diversity_loss
from .streaming import finalize, open_stream, push_chunk, stream_encode
from .training import ModelConfig, TrainConfig, Trainer, train

__all__ = [
    "ChunkLayout",
    "DualModeEncoder",
    "GumbelQuantizer",
    "MaskingPlan",
    "ModelConfig",
    "OnlineRegisterEncoder",
    "SlotKind",
    "StreamConfig",
    "TrainConfig",
    "Trainer",
    "apply_time_mask",
    "assemble_online_input",
    "build_layout",
    "build_online_mask",
    "build_online_mask_bruteforce",
    "contrastive_loss",
    "diversity_loss",
    "finalize",
    "future_prediction_loss",
    "open_stream",
    "push_chunk",
    "sinusoidal_pe",
    "stream_encode",
    "total_loss",
    "train",
]
__version__ = "0.1.0"
