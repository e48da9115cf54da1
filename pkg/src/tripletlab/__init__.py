"""Triplet metric learning with stability-based generalization diagnostics.

The package trains a symmetric bilinear metric on relative-similarity
triplets (one anchor and one same-pool partner against a cross-pool sample)
with either averaged SGD or ridge-regularized risk minimization, and ships a
small lab for estimating algorithmic-stability constants and checking them
against their closed-form bounds.
"""

from .core import (
    DimensionMismatch,
    Pool,
    Sample,
    SlotRef,
    TripletDataset,
    TripletIndex,
    ValidationError,
    enumerate_triplets,
    feature_bound,
    make_dataset,
    read_dataset_csv,
    replace_samples,
    write_dataset_csv,
)
from .loss import (
    LossConfig,
    MetricParams,
    RegularityConstants,
    logistic_triplet_grad,
    logistic_triplet_loss,
    metric_score,
    read_metric_csv,
    regularity_constants,
    triplet_margin,
    write_metric_csv,
    zero_one_triplet_loss,
)
from .optim import (
    MaxItersExceeded,
    RrmConfig,
    SgdConfig,
    TrainTrace,
    expansiveness_check,
    regularized_objective,
    rrm_train,
    sampling_uniformity_check,
    sgd_train,
    write_trace_csv,
)
from .risk import (
    RiskEstimate,
    RiskMode,
    bernstein_ustat_bound,
    empirical_risk,
    generalization_gap,
    population_risk,
)
from .stability import (
    ConstantTrainer,
    RegimeViolation,
    RrmTrainer,
    SgdTrainer,
    StabilityReport,
    chernoff_hit_bound,
    estimate_on_average_stability,
    estimate_uniform_stability,
    high_probability_gap_bound,
    loss_expectation_bound,
    optimistic_epsilon,
    optimistic_gap_bound,
    rrm_stability_bound,
    sgd_stability_bound,
    write_stability_csv,
)
from .synth import TaskConfig, TripletSampler, gen_task, low_noise_task
from .lab import (
    SweepConfig,
    SweepReport,
    fit_loglog_slope,
    run_excess_risk_experiment,
    run_optimistic_experiment,
    run_rate_sweep,
)

__version__ = "0.1.0"

__all__ = [
    "ConstantTrainer",
    "DimensionMismatch",
    "LossConfig",
    "MaxItersExceeded",
    "MetricParams",
    "Pool",
    "RegimeViolation",
    "RegularityConstants",
    "RiskEstimate",
    "RiskMode",
    "RrmConfig",
    "RrmTrainer",
    "Sample",
    "SgdConfig",
    "SgdTrainer",
    "SlotRef",
    "StabilityReport",
    "SweepConfig",
    "SweepReport",
    "TaskConfig",
    "TrainTrace",
    "TripletDataset",
    "TripletIndex",
    "TripletSampler",
    "ValidationError",
    "bernstein_ustat_bound",
    "chernoff_hit_bound",
    "empirical_risk",
    "enumerate_triplets",
    "estimate_on_average_stability",
    "estimate_uniform_stability",
    "expansiveness_check",
    "feature_bound",
    "fit_loglog_slope",
    "gen_task",
    "generalization_gap",
    "high_probability_gap_bound",
    "logistic_triplet_grad",
    "logistic_triplet_loss",
    "loss_expectation_bound",
    "low_noise_task",
    "make_dataset",
    "metric_score",
    "optimistic_epsilon",
    "optimistic_gap_bound",
    "population_risk",
    "read_dataset_csv",
    "read_metric_csv",
    "regularity_constants",
    "regularized_objective",
    "replace_samples",
    "rrm_stability_bound",
    "rrm_train",
    "run_excess_risk_experiment",
    "run_optimistic_experiment",
    "run_rate_sweep",
    "sampling_uniformity_check",
    "sgd_stability_bound",
    "sgd_train",
    "triplet_margin",
    "write_dataset_csv",
    "write_metric_csv",
    "write_stability_csv",
    "write_trace_csv",
    "zero_one_triplet_loss",
]
