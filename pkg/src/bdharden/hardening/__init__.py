"""Adversarial hardening: pair scheduling, warmup scan, and the training loop."""

from .schedule import (
    PairSchedule,
    class_samples,
    infer_num_classes,
    select_pair,
    warmup_scan,
)
from .train import (
    ROUND_COLUMNS,
    HardeningConfig,
    HardeningReport,
    RoundRecord,
    build_round_batch,
    harden,
)

__all__ = [
    "PairSchedule",
    "class_samples",
    "infer_num_classes",
    "select_pair",
    "warmup_scan",
    "HardeningConfig",
    "HardeningReport",
    "RoundRecord",
    "ROUND_COLUMNS",
    "build_round_batch",
    "harden",
]
