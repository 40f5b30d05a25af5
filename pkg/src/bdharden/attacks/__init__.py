"""Injected pervasive attacks, poisoning plumbing, and ASR evaluation."""

from .triggers import (
    FILTER_IDS,
    blend_trigger,
    filter_trigger,
    make_blend_pattern,
    make_warp_field,
    mean_displacement,
    sig_trigger,
    tone_curve,
    wanet_trigger,
    warp_image,
)
from .pgd import pgd_attack
from .poison import (
    FAMILIES,
    GRID_SIZE,
    PoisonSpec,
    PoisonedDataset,
    build_trigger,
    cleanlabel_poison,
    default_spec,
    eligible_indices,
    eval_asr,
    poison,
    select_poison_indices,
    stamp_grid,
)

__all__ = [
    "FILTER_IDS",
    "blend_trigger",
    "filter_trigger",
    "make_blend_pattern",
    "make_warp_field",
    "mean_displacement",
    "sig_trigger",
    "tone_curve",
    "wanet_trigger",
    "warp_image",
    "pgd_attack",
    "FAMILIES",
    "GRID_SIZE",
    "PoisonSpec",
    "PoisonedDataset",
    "build_trigger",
    "cleanlabel_poison",
    "default_spec",
    "eligible_indices",
    "eval_asr",
    "poison",
    "select_poison_indices",
    "stamp_grid",
]
