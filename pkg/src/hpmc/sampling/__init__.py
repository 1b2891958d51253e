"""Numerical core: targets, proposals, weights, resampling, HMC and location adaptation."""

from .counters import EvalCounters
from .hmc import ChainState, HmcParams, hmc_step, leapfrog
from .proposals import (
    GaussianProposal,
    ProposalPopulation,
    init_population,
    log_population_mixture,
    log_proposal_pdf,
    sample_population,
)
from .targets import (
    BananaSpec,
    GaussianMixtureSpec,
    TargetDensity,
    build_benchmark_target,
    evaluate,
    log_mixture_density,
)
from .weighting import (
    EstimateAccumulator,
    compute_weights,
    normalize,
    snis_estimate,
    uis_estimate,
    z_estimate,
)

__all__ = [
    "BananaSpec",
    "ChainState",
    "EstimateAccumulator",
    "EvalCounters",
    "GaussianMixtureSpec",
    "GaussianProposal",
    "HmcParams",
    "ProposalPopulation",
    "TargetDensity",
    "build_benchmark_target",
    "compute_weights",
    "evaluate",
    "hmc_step",
    "init_population",
    "leapfrog",
    "log_mixture_density",
    "log_population_mixture",
    "log_proposal_pdf",
    "normalize",
    "sample_population",
    "snis_estimate",
    "uis_estimate",
    "z_estimate",
]
