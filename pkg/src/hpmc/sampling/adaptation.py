"""Location adaptation of the hybrid sampler.

First two sets of preliminary locations are produced: P by local resampling
of the current weighted samples, Q by one HMC transition of the persistent
per-proposal chains. The union C = P + Q is DM-weighted against the current
population, then a cooperation step (global resampling, or an independence
Metropolis move against a weighted kernel mixture) yields the N locations
of the next population.
"""

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from ..errors import ContractViolationError
from .counters import EvalCounters
from .hmc import ChainState, HmcParams, HmcTransition, hmc_step
from .metropolis import metropolis_accept
from .proposals import ProposalPopulation, log_population_mixture
from .resampling import (
    LocalResample,
    RandomMeasure,
    global_resample,
    local_resample,
    multinomial_indices,
)
from .targets import LOG_2PI, TargetDensity, as_batch, evaluate
from .weighting import WeightedSampleSet, normalize

IncumbentPairing = Literal["q_set", "listed_order"]

FROM_SAMPLES = "P"
FROM_LOCATIONS = "Q"


@dataclass(frozen=True)
class PreliminaryLocationSet:
    """Candidate locations with provenance, cached log pi and, once weighted, DM weights.

    ``log_mixture`` caches ``log[(1/N) sum_n q_n(x)]`` under the current
    population where it is already known (NaN elsewhere).
    """

    locations: NDArray[np.float64]  # (M, d)
    log_pi: NDArray[np.float64]  # (M,)
    provenance: NDArray[np.str_]  # (M,) "P" or "Q"
    log_mixture: NDArray[np.float64]  # (M,)
    dm_log_weights: NDArray[np.float64] | None = None
    normalized_weights: NDArray[np.float64] | None = None
    degenerate: bool = False

    @property
    def size(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    def indices_of(self, provenance: str) -> NDArray[np.intp]:
        return np.flatnonzero(self.provenance == provenance)

    @classmethod
    def combine(
        cls,
        from_samples: LocalResample | None = None,
        from_locations: ChainState | None = None,
    ) -> "PreliminaryLocationSet":
        """C = P followed by Q; either part may be absent."""
        parts = []
        if from_samples is not None:
            n = from_samples.points.shape[0]
            parts.append(
                (
                    from_samples.points,
                    from_samples.log_pi,
                    np.full(n, FROM_SAMPLES),
                    (
                        from_samples.log_denominator
                        if from_samples.scheme == "dm"
                        else np.full(n, np.nan)
                    ),
                )
            )
        if from_locations is not None:
            n = from_locations.size
            parts.append(
                (
                    from_locations.position,
                    from_locations.log_pi,
                    np.full(n, FROM_LOCATIONS),
                    np.full(n, np.nan),
                )
            )
        if not parts:
            raise ContractViolationError("no preliminary locations to combine")
        locations, log_pi, provenance, log_mixture = (
            np.concatenate(column) for column in zip(*parts)
        )
        return cls(
            locations=locations,
            log_pi=log_pi,
            provenance=provenance,
            log_mixture=log_mixture,
        )


def preliminary_from_samples(
    weighted: WeightedSampleSet,
    rng: np.random.Generator,
    counters: EvalCounters | None = None,
) -> LocalResample:
    """P: one location per proposal by local resampling of its K weighted samples.

    No fresh target evaluation; the carried log pi values are charged as
    cache hits.
    """
    picked = local_resample(weighted, rng)
    if counters is not None:
        counters.cached_density_hits += picked.points.shape[0]
    return picked


def preliminary_from_locations(
    chains: ChainState,
    target: TargetDensity,
    params: HmcParams,
    rng: np.random.Generator,
    counters: EvalCounters | None = None,
) -> HmcTransition:
    """Q: one HMC transition of every persistent chain; the new positions are Q."""
    return hmc_step(chains, target, params, rng, counters)


def weight_preliminary(
    C: PreliminaryLocationSet,
    pop: ProposalPopulation,
    counters: EvalCounters | None = None,
) -> PreliminaryLocationSet:
    """DM weights of every location against the current population, normalised over C.

    w_i = pi(mu_i) / [(1/N) sum_n q_n(mu_i)]. Locations drawn from the
    weighted samples reuse their cached mixture value.
    """
    log_mixture = C.log_mixture.copy()
    missing = np.isnan(log_mixture)
    if missing.any():
        log_mixture[missing] = log_population_mixture(pop, C.locations[missing])
        if counters is not None:
            counters.adaptation_proposal_evals += int(missing.sum()) * pop.size

    with np.errstate(invalid="ignore"):
        log_w = C.log_pi - log_mixture
    log_w = np.where(np.isnan(log_w), -np.inf, log_w)
    normalized = normalize(log_w, "global")
    return replace(
        C,
        log_mixture=log_mixture,
        dm_log_weights=log_w,
        normalized_weights=normalized.weights,
        degenerate=normalized.any_degenerate,
    )


@dataclass(frozen=True)
class CooperationResult:
    locations: NDArray[np.float64]  # (N, d)
    log_pi: NDArray[np.float64]  # (N,)
    # index into C each output came from (the psi component for accepted candidates)
    source_index: NDArray[np.intp]
    accepted: NDArray[np.bool_] | None = None


def _require_weights(C: PreliminaryLocationSet) -> NDArray[np.float64]:
    if C.normalized_weights is None:
        raise ContractViolationError("preliminary locations have not been weighted")
    return C.normalized_weights


def cooperate_resample(
    C: PreliminaryLocationSet, N: int, rng: np.random.Generator
) -> CooperationResult:
    """N unweighted locations by global multinomial resampling of all of C."""
    measure = RandomMeasure(atoms=C.locations, normalized_weights=_require_weights(C))
    locations, indices = global_resample(measure, N, rng)
    return CooperationResult(
        locations=locations, log_pi=C.log_pi[indices], source_index=indices
    )


def cooperation_mixture_log_density(
    C: PreliminaryLocationSet,
    kernel_scales: ArrayLike,
    x: ArrayLike,
    counters: EvalCounters | None = None,
):
    """``log psi(x) = log sum_i w_i N(x; mu_i, s_i^2 I)`` over the weighted set C."""
    points, single = as_batch(x, C.dim)
    weights = _require_weights(C)
    scales = np.broadcast_to(np.asarray(kernel_scales, dtype=float), (C.size,))
    sq = cdist(points, C.locations, metric="sqeuclidean")
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    log_kernel = (
        -0.5 * C.dim * (LOG_2PI + 2.0 * np.log(scales)) - 0.5 * sq / scales**2
    )
    values = logsumexp(log_w + log_kernel, axis=1)
    if counters is not None:
        counters.kernel_evals += sq.size
    return float(values[0]) if single else values


def incumbent_indices(
    C: PreliminaryLocationSet, N: int, pairing: IncumbentPairing = "q_set"
) -> NDArray[np.intp]:
    """Which location of C each of the N slots is compared against.

    ``q_set`` pairs slot j with the j-th HMC location; it falls back to
    listed order when C holds no complete Q set.
    """
    if pairing == "q_set":
        q_rows = C.indices_of(FROM_LOCATIONS)
        if q_rows.shape[0] == N:
            return q_rows
    elif pairing != "listed_order":
        raise ContractViolationError(f"unknown incumbent pairing '{pairing}'")
    return np.arange(N) % C.size


def cooperate_mixture(
    C: PreliminaryLocationSet,
    N: int,
    kernel_scales: ArrayLike,
    target: TargetDensity,
    rng: np.random.Generator,
    counters: EvalCounters | None = None,
    pairing: IncumbentPairing = "q_set",
) -> CooperationResult:
    """Independence-Metropolis cooperation against the weighted kernel mixture psi.

    For each slot j a candidate mu'_j ~ psi replaces the incumbent mu_j with
    probability min(1, pi(mu'_j) psi(mu_j) / (pi(mu_j) psi(mu'_j))). Costs N
    fresh target evaluations and 2 N |C| kernel evaluations.
    """
    weights = _require_weights(C)
    scales = np.broadcast_to(np.asarray(kernel_scales, dtype=float), (C.size,))
    if not (scales > 0).all():
        raise ContractViolationError("kernel scales must be positive")

    components = multinomial_indices(weights, N, rng)
    noise = rng.standard_normal((N, C.dim))
    candidates = C.locations[components] + scales[components, None] * noise
    candidate_log_pi, _ = evaluate(target, candidates, counters=counters)

    incumbents = incumbent_indices(C, N, pairing)
    incumbent_points = C.locations[incumbents]
    incumbent_log_pi = C.log_pi[incumbents]

    log_psi_candidate = cooperation_mixture_log_density(C, scales, candidates, counters)
    log_psi_incumbent = cooperation_mixture_log_density(
        C, scales, incumbent_points, counters
    )

    with np.errstate(invalid="ignore"):
        log_ratio = (candidate_log_pi + log_psi_incumbent) - (
            incumbent_log_pi + log_psi_candidate
        )
    accept, _ = metropolis_accept(log_ratio, rng)

    return CooperationResult(
        locations=np.where(accept[:, None], candidates, incumbent_points),
        log_pi=np.where(accept, candidate_log_pi, incumbent_log_pi),
        source_index=np.where(accept, components, incumbents),
        accepted=accept,
    )
