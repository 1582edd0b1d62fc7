"""Mixture-weighted ensemble Kalman filtering with quasi-Monte Carlo sampling.

A filtering library and benchmark harness: the bootstrap particle filter,
the stochastic ensemble Kalman filter with two gain constructions, six
self-normalized importance-sampling reweighted variants, low-discrepancy
(transported scrambled Sobol') counterparts, and the diagnostics used to
compare them on chaotic ODE benchmarks.
"""

from .filters import (
    ProposalSet,
    SchemeSpec,
    StepSummary,
    TargetSet,
    WeightedEnsemble,
    enkf_update,
    filter_step,
    gain_current,
    gain_previous,
    generic_filter_step,
    initial_ensemble,
    predict,
    proposals_current,
    proposals_previous,
    run_filter,
    snis_weights,
    systematic_resample,
)
from .gauss import (
    GaussianComponent,
    GaussianMixture,
    SpdMatrix,
    chol,
    empirical_cov,
    log_gaussian_density,
    log_mixture_density,
    log_sum_exp,
    mahalanobis_sq,
)
from .models import (
    StateSpaceModel,
    Trajectory,
    build_benchmark,
    simulate_truth,
    test_integrand,
)
from .qmc import (
    LowDiscrepancySet,
    QmcScheme,
    inv_norm_cdf,
    owen_scramble,
    run_tqmc_filter,
    sobol,
    tqmc_filter_step,
    transport_to_mixture,
)
from .diagnostics import KernelSpec, RunRecord, ess, mae, median_bandwidth, mmd_sq

__version__ = "0.1.0"

__all__ = [
    "GaussianComponent",
    "GaussianMixture",
    "KernelSpec",
    "LowDiscrepancySet",
    "ProposalSet",
    "QmcScheme",
    "RunRecord",
    "SchemeSpec",
    "SpdMatrix",
    "StateSpaceModel",
    "StepSummary",
    "TargetSet",
    "Trajectory",
    "WeightedEnsemble",
    "build_benchmark",
    "chol",
    "empirical_cov",
    "enkf_update",
    "ess",
    "filter_step",
    "gain_current",
    "gain_previous",
    "generic_filter_step",
    "initial_ensemble",
    "inv_norm_cdf",
    "log_gaussian_density",
    "log_mixture_density",
    "log_sum_exp",
    "mae",
    "mahalanobis_sq",
    "median_bandwidth",
    "mmd_sq",
    "owen_scramble",
    "predict",
    "proposals_current",
    "proposals_previous",
    "run_filter",
    "run_tqmc_filter",
    "simulate_truth",
    "snis_weights",
    "sobol",
    "systematic_resample",
    "test_integrand",
    "tqmc_filter_step",
    "transport_to_mixture",
]
