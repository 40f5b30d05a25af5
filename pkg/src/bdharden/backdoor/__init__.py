"""Input-dependent perturbation generator and its building blocks."""

from .conv_equivalence import (
    conv2x2_lower_pad,
    transform_activations,
    closed_form_perturbation,
    equivalence_residual,
    max_residual_over_draws,
)
from .normalize import ChannelAlign, batch_channel_stats, sample_channel_stats
from .regional import RegionalConv
from .ssim import ssim_distance, ssim_index
from .losses import (
    AdaptiveWeight,
    LossTerms,
    LossWeights,
    combine,
    content_mse,
    neighborhood_smoothness,
    stat_match_l1,
)
from .generator import (
    GenConfig,
    GenResult,
    GenerationError,
    PerturbationGenerator,
    generate_backdoor,
    load_generator,
    read_trace,
    save_generator,
    write_trace,
    TRACE_COLUMNS,
)

__all__ = [
    "conv2x2_lower_pad",
    "transform_activations",
    "closed_form_perturbation",
    "equivalence_residual",
    "max_residual_over_draws",
    "ChannelAlign",
    "batch_channel_stats",
    "sample_channel_stats",
    "RegionalConv",
    "ssim_distance",
    "ssim_index",
    "AdaptiveWeight",
    "LossTerms",
    "LossWeights",
    "combine",
    "content_mse",
    "neighborhood_smoothness",
    "stat_match_l1",
    "GenConfig",
    "GenResult",
    "GenerationError",
    "PerturbationGenerator",
    "generate_backdoor",
    "load_generator",
    "read_trace",
    "save_generator",
    "write_trace",
    "TRACE_COLUMNS",
]
