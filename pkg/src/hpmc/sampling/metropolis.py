"""Vectorised Metropolis-Hastings acceptance and the random-walk kernel."""

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .counters import EvalCounters
from .targets import TargetDensity


def log_acceptance(log_ratio: NDArray[np.float64]) -> NDArray[np.float64]:
    """``log min(1, ratio)``; NaN ratios (both densities zero, overflow) map to -inf."""
    log_ratio = np.asarray(log_ratio, dtype=float)
    return np.where(np.isnan(log_ratio), -np.inf, np.minimum(0.0, log_ratio))


def metropolis_accept(
    log_ratio: NDArray[np.float64], rng: np.random.Generator
) -> tuple[NDArray[np.bool_], NDArray[np.float64]]:
    """Accept each entry with probability min(1, exp(log_ratio)).

    Always consumes one uniform per entry. Returns the decisions and the
    acceptance probabilities.
    """
    log_alpha = log_acceptance(log_ratio)
    u = rng.random(log_alpha.shape)
    with np.errstate(divide="ignore"):
        accept = np.log(u) < log_alpha
    return accept, np.exp(log_alpha)


@dataclass(frozen=True)
class RandomWalkTransition:
    position: NDArray[np.float64]  # (N, d)
    log_pi: NDArray[np.float64]  # (N,)
    accepted: NDArray[np.bool_]  # (N,)


def random_walk_step(
    position: NDArray[np.float64],
    log_pi: NDArray[np.float64],
    target: TargetDensity,
    scale: float,
    rng: np.random.Generator,
    counters: EvalCounters | None = None,
) -> RandomWalkTransition:
    """One Gaussian random-walk Metropolis move of N independent chains."""
    candidate = position + scale * rng.standard_normal(position.shape)
    candidate_log_pi = np.asarray(target.log_density(candidate))
    if counters is not None:
        counters.target_density_evals += candidate.shape[0]

    with np.errstate(invalid="ignore"):
        accept, _ = metropolis_accept(candidate_log_pi - log_pi, rng)
    return RandomWalkTransition(
        position=np.where(accept[:, None], candidate, position),
        log_pi=np.where(accept, candidate_log_pi, log_pi),
        accepted=accept,
    )
