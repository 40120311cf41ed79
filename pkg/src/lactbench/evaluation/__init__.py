"""Sample construction, folds, metrics and the cross-validated experiment runner."""

from .experiment import ExperimentConfig, ExperimentConfigError, ResultTable, derive_seed, resolve_data, run_experiment
from .folds import FoldAssignment, kfold
from .metrics import LOWER_IS_BETTER, METRICS, MetricError, mae, r2, rmse
from .samples import Sample, SampleSet, build_samples

__all__ = [
    "ExperimentConfig",
    "ExperimentConfigError",
    "ResultTable",
    "derive_seed",
    "resolve_data",
    "run_experiment",
    "FoldAssignment",
    "kfold",
    "LOWER_IS_BETTER",
    "METRICS",
    "MetricError",
    "mae",
    "r2",
    "rmse",
    "Sample",
    "SampleSet",
    "build_samples",
]
