"""Experiment harness: data, model zoo, robustness, orchestration, CLI."""

from .data import (
    DatasetError,
    FORMATS,
    ImageDataset,
    RECORD_BYTES,
    SHAPE_CLASSES,
    VAL_SPLIT_SEED,
    load_dataset,
    make_shape_dataset,
    write_cifar10_binary,
)
from .models import (
    ARCHS,
    MAX_PARAMS,
    TrainConfig,
    TrainResult,
    TrainingDivergence,
    build_model,
    train_model,
)
from .robustness import (
    PGD_EPS,
    PGD_STEPS,
    FinetuneConfig,
    finetune_baseline,
    pgd_eval,
)
from .experiment import (
    ExperimentConfig,
    ExperimentError,
    ExperimentExists,
    PHASES,
    PhaseRecord,
    RunReport,
    RunState,
    run_experiment,
)
from .report import (
    TABLE_COLUMNS,
    method_rows,
    plot_asr_bars,
    plot_distance_bars,
    render_table,
)

__all__ = [
    "DatasetError",
    "FORMATS",
    "ImageDataset",
    "RECORD_BYTES",
    "SHAPE_CLASSES",
    "VAL_SPLIT_SEED",
    "load_dataset",
    "make_shape_dataset",
    "write_cifar10_binary",
    "ARCHS",
    "MAX_PARAMS",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergence",
    "build_model",
    "train_model",
    "PGD_EPS",
    "PGD_STEPS",
    "FinetuneConfig",
    "finetune_baseline",
    "pgd_eval",
    "ExperimentConfig",
    "ExperimentError",
    "ExperimentExists",
    "PHASES",
    "PhaseRecord",
    "RunReport",
    "RunState",
    "run_experiment",
    "TABLE_COLUMNS",
    "method_rows",
    "plot_asr_bars",
    "plot_distance_bars",
    "render_table",
]
