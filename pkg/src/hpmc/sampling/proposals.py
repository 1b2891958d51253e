"""Isotropic Gaussian proposals and populations of N of them."""

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from ..errors import ContractViolationError, InvalidSpecError
from .counters import EvalCounters
from .targets import LOG_2PI, as_batch


@dataclass(frozen=True)
class GaussianProposal:
    location: NDArray[np.float64]
    scale: float

    def __post_init__(self):
        location = np.atleast_1d(np.asarray(self.location, dtype=float))
        if not np.isfinite(location).all():
            raise InvalidSpecError("proposal location must be finite")
        if not self.scale > 0:
            raise InvalidSpecError(f"proposal scale must be positive, got {self.scale}")
        object.__setattr__(self, "location", location)

    @property
    def dim(self) -> int:
        return self.location.shape[0]


@dataclass(frozen=True)
class ProposalPopulation:
    """N proposals ``N(mu_n, sigma_n^2 I)`` held as arrays.

    ``locations`` is ``(N, d)`` and ``scales`` is ``(N,)``. Populations are
    snapshots: adaptation builds the next one with :meth:`with_locations`.
    """

    locations: NDArray[np.float64]
    scales: NDArray[np.float64]
    iteration: int = 1

    def __post_init__(self):
        locations = np.asarray(self.locations, dtype=float)
        if locations.ndim != 2 or locations.shape[0] < 1:
            raise InvalidSpecError("a population needs at least one proposal")
        scales = np.broadcast_to(
            np.asarray(self.scales, dtype=float), (locations.shape[0],)
        ).copy()
        if not (scales > 0).all():
            raise InvalidSpecError("proposal scales must be positive")
        if not np.isfinite(locations).all():
            raise InvalidSpecError("proposal locations must be finite")
        if self.iteration < 1:
            raise InvalidSpecError("iteration counter starts at 1")
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "scales", scales)

    @classmethod
    def from_proposals(
        cls, proposals: list[GaussianProposal], iteration: int = 1
    ) -> "ProposalPopulation":
        if not proposals:
            raise InvalidSpecError("a population needs at least one proposal")
        if len({p.dim for p in proposals}) != 1:
            raise InvalidSpecError("all proposals must share one dimension")
        return cls(
            locations=np.stack([p.location for p in proposals]),
            scales=np.array([p.scale for p in proposals]),
            iteration=iteration,
        )

    @property
    def size(self) -> int:
        return self.locations.shape[0]

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def proposals(self) -> list[GaussianProposal]:
        return [
            GaussianProposal(location=loc, scale=float(s))
            for loc, s in zip(self.locations, self.scales)
        ]

    def with_locations(self, locations: ArrayLike) -> "ProposalPopulation":
        """Next iteration's population: new locations, same scales."""
        return ProposalPopulation(
            locations=np.array(locations, dtype=float),
            scales=self.scales,
            iteration=self.iteration + 1,
        )

    def permuted(self, order: ArrayLike) -> "ProposalPopulation":
        order = np.asarray(order)
        return ProposalPopulation(
            locations=self.locations[order],
            scales=self.scales[order],
            iteration=self.iteration,
        )


def init_population(
    N: int,
    dim: int,
    box_low: float,
    box_high: float,
    sigma: float,
    rng: np.random.Generator,
) -> ProposalPopulation:
    """N locations drawn uniformly per coordinate from ``[box_low, box_high]``."""
    if N < 1 or dim < 1:
        raise InvalidSpecError("N and dim must be positive")
    if box_low > box_high:
        raise InvalidSpecError(f"invalid box [{box_low}, {box_high}]")
    if not sigma > 0:
        raise InvalidSpecError(f"sigma must be positive, got {sigma}")
    if box_low == box_high:
        locations = np.full((N, dim), float(box_low))
    else:
        locations = rng.uniform(box_low, box_high, size=(N, dim))
    return ProposalPopulation(locations=locations, scales=np.full(N, float(sigma)))


def sample_population(
    pop: ProposalPopulation, K: int, rng: np.random.Generator
) -> NDArray[np.float64]:
    """Draw K samples from each proposal; returns ``(N, K, d)``, row n from proposal n."""
    if K < 1:
        raise ContractViolationError(f"K must be at least 1, got {K}")
    noise = rng.standard_normal((pop.size, K, pop.dim))
    return pop.locations[:, None, :] + pop.scales[:, None, None] * noise


def log_isotropic_gaussian(
    points: NDArray[np.float64], location: NDArray[np.float64], scale
) -> NDArray[np.float64]:
    dim = points.shape[-1]
    sq = np.sum((points - location) ** 2, axis=-1)
    return -0.5 * dim * (LOG_2PI + 2.0 * np.log(scale)) - 0.5 * sq / scale**2


def log_proposal_pdf(
    p: GaussianProposal, x: ArrayLike, counters: EvalCounters | None = None
):
    """Normalised ``log q(x)`` for one proposal."""
    points, single = as_batch(x, p.dim)
    values = log_isotropic_gaussian(points, p.location, p.scale)
    if counters is not None:
        counters.proposal_evals += points.shape[0]
    return float(values[0]) if single else values


def log_proposal_matrix(
    pop: ProposalPopulation, x: ArrayLike, counters: EvalCounters | None = None
) -> NDArray[np.float64]:
    """``log q_j(x_i)`` for every point i and proposal j, shape ``(m, N)``.

    Charges m*N proposal evaluations to ``counters``.
    """
    points, _ = as_batch(x, pop.dim)
    sq = cdist(points, pop.locations, metric="sqeuclidean")
    scales = pop.scales[None, :]
    values = -0.5 * pop.dim * (LOG_2PI + 2.0 * np.log(scales)) - 0.5 * sq / scales**2
    if counters is not None:
        counters.proposal_evals += values.size
    return values


def log_population_mixture(
    pop: ProposalPopulation, x: ArrayLike, counters: EvalCounters | None = None
):
    """``log[(1/N) sum_j q_j(x)]`` via log-sum-exp."""
    _, single = as_batch(x, pop.dim)
    # sorted accumulation keeps the value independent of proposal order
    terms = np.sort(log_proposal_matrix(pop, x, counters), axis=1)
    values = logsumexp(terms, axis=1) - np.log(pop.size)
    return float(values[0]) if single else values
