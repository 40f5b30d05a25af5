"""Pair-wise class distances from converged backdoor generators."""

from .metric import (
    DistanceMatrix,
    PairMeasurement,
    distance_report,
    feature_distance,
    load_matrix,
    relative_improvement,
    save_matrix,
)
from .measure import (
    MeasurementProtocol,
    all_ordered_pairs,
    measure_matrix,
    measure_pair_distance,
    sample_pairs,
    select_victim_samples,
)

__all__ = [
    "DistanceMatrix",
    "PairMeasurement",
    "distance_report",
    "feature_distance",
    "load_matrix",
    "relative_improvement",
    "save_matrix",
    "MeasurementProtocol",
    "all_ordered_pairs",
    "measure_matrix",
    "measure_pair_distance",
    "sample_pairs",
    "select_victim_samples",
]
