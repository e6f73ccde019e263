"""Weighted soft Bayesian additive regression trees for asynchronous longitudinal data."""

__version__ = "0.1.0"

from .async_regression import (
    AsyncFit,
    AsyncRegressor,
    BandwidthPolicy,
    BandwidthSearchReport,
    LagPolicy,
    LagSearchReport,
    RegressionSpec,
    bandwidth_search,
    build_design,
    fit_async,
    lag_search,
)
from .estimator import SoftBARTRegressor
from .longitudinal import (
    AsyncDataset,
    CaseTable,
    DataError,
    KernelSpec,
    SubjectSeries,
    WeightedCase,
    build_pairs,
    default_bandwidth,
    kernel_weight,
    linear_interp_align,
    load_csv,
    locf_align,
    save_csv,
)
from .sampler import (
    ChainState,
    PosteriorDraws,
    Priors,
    SamplerConfig,
    calibrate_hyperparams,
    fit,
    gibbs_iteration,
    predict,
)
from .simulation import SimConfig, generate_dataset, rmse, run_experiment
from .soft_tree import Forest, SoftTree, gate_prob, leaf_probs, weighted_marginal_loglik

__all__ = [
    "AsyncDataset", "AsyncFit", "AsyncRegressor", "BandwidthPolicy", "BandwidthSearchReport",
    "CaseTable", "ChainState", "DataError", "Forest", "KernelSpec", "LagPolicy", "LagSearchReport",
    "PosteriorDraws", "Priors", "RegressionSpec", "SamplerConfig", "SimConfig", "SoftBARTRegressor",
    "SoftTree", "SubjectSeries", "WeightedCase", "bandwidth_search", "build_design", "build_pairs",
    "calibrate_hyperparams", "default_bandwidth", "fit", "fit_async", "gate_prob", "generate_dataset",
    "gibbs_iteration", "kernel_weight", "lag_search", "leaf_probs", "linear_interp_align", "load_csv",
    "locf_align", "predict", "rmse", "run_experiment", "save_csv", "weighted_marginal_loglik",
]
