"""Image codec: truncated-classifier encoder and mirrored randomized decoder."""

from .upsample import SCHEMES, pool_with_positions, upsample_cells
from .networks import (
    Decoder,
    Encoder,
    EncoderClassifier,
    build_codec_pair,
    stage_channels,
)
from .stats import collect_channel_stats
from .training import (
    DecoderDivergence,
    classifier_accuracy,
    heldout_mse,
    train_decoder,
    train_encoder_classifier,
)
from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_codec,
    read_manifest,
    save_checkpoint,
    save_codec,
)

__all__ = [
    "SCHEMES",
    "pool_with_positions",
    "upsample_cells",
    "Decoder",
    "Encoder",
    "EncoderClassifier",
    "build_codec_pair",
    "stage_channels",
    "collect_channel_stats",
    "DecoderDivergence",
    "classifier_accuracy",
    "heldout_mse",
    "train_decoder",
    "train_encoder_classifier",
    "CheckpointError",
    "load_checkpoint",
    "load_codec",
    "read_manifest",
    "save_checkpoint",
    "save_codec",
]
