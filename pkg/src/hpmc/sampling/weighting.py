"""Importance weights, their normalisation, and the streaming IS estimators."""

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

from ..errors import ContractViolationError, DegenerateEstimateError
from .counters import EvalCounters
from .proposals import (
    ProposalPopulation,
    log_isotropic_gaussian,
    log_population_mixture,
)
from .targets import TargetDensity, evaluate

WeightScheme = Literal["dm", "standard"]
NormalizationScope = Literal["global", "local"]


@dataclass(frozen=True)
class WeightedSample:
    x: NDArray[np.float64]
    log_w: float
    proposal_index: int
    iteration: int
    cached_log_pi: float


@dataclass(frozen=True)
class WeightedSampleSet:
    """One iteration's N*K weighted draws as a struct of arrays.

    Row n holds the K draws of proposal n. ``log_denominator`` is the
    proposal term of the weight (mixture for ``dm``, own proposal for
    ``standard``); it travels with the samples so later steps can reuse it.
    """

    points: NDArray[np.float64]  # (N, K, d)
    log_w: NDArray[np.float64]  # (N, K)
    log_pi: NDArray[np.float64]  # (N, K)
    log_denominator: NDArray[np.float64]  # (N, K)
    iteration: int
    scheme: WeightScheme = "dm"

    @property
    def n_proposals(self) -> int:
        return self.points.shape[0]

    @property
    def k(self) -> int:
        return self.points.shape[1]

    @property
    def dim(self) -> int:
        return self.points.shape[2]

    def flat_points(self) -> NDArray[np.float64]:
        return self.points.reshape(-1, self.dim)

    def records(self) -> list[WeightedSample]:
        return [
            WeightedSample(
                x=self.points[n, k],
                log_w=float(self.log_w[n, k]),
                proposal_index=n,
                iteration=self.iteration,
                cached_log_pi=float(self.log_pi[n, k]),
            )
            for n in range(self.n_proposals)
            for k in range(self.k)
        ]


def compute_weights(
    samples: NDArray[np.float64],
    pop: ProposalPopulation,
    target: TargetDensity,
    scheme: WeightScheme = "dm",
    counters: EvalCounters | None = None,
) -> WeightedSampleSet:
    """Weight the ``(N, K, d)`` draws of ``pop`` against ``target``.

    ``dm``: log pi(x) - log[(1/N) sum_j q_j(x)] (N proposal evaluations per
    sample). ``standard``: log pi(x) - log q_n(x) for the proposal that
    drew x (one evaluation per sample).
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3 or samples.shape[0] != pop.size or samples.shape[2] != pop.dim:
        raise ContractViolationError(
            f"samples of shape {samples.shape} do not match a population of "
            f"{pop.size} proposals in {pop.dim} dimensions"
        )
    n, k, d = samples.shape
    flat = samples.reshape(-1, d)

    log_pi, _ = evaluate(target, flat, counters=counters)
    log_pi = np.asarray(log_pi).reshape(n, k)

    if scheme == "dm":
        log_den = log_population_mixture(pop, flat, counters).reshape(n, k)
    elif scheme == "standard":
        log_den = log_isotropic_gaussian(
            samples, pop.locations[:, None, :], pop.scales[:, None]
        )
        if counters is not None:
            counters.proposal_evals += n * k
    else:
        raise ContractViolationError(f"unknown weighting scheme '{scheme}'")

    return WeightedSampleSet(
        points=samples,
        log_w=log_pi - log_den,
        log_pi=log_pi,
        log_denominator=log_den,
        iteration=pop.iteration,
        scheme=scheme,
    )


@dataclass(frozen=True)
class NormalizedWeights:
    weights: NDArray[np.float64]
    # one flag per normalisation group; True where the uniform fallback was used
    degenerate: NDArray[np.bool_]

    @property
    def any_degenerate(self) -> bool:
        return bool(self.degenerate.any())


def normalize(
    log_w: ArrayLike | WeightedSampleSet, scope: NormalizationScope = "global"
) -> NormalizedWeights:
    """Normalise log weights over all samples (``global``) or per proposal row (``local``).

    A group whose weights are all zero falls back to uniform weights and is
    flagged in ``degenerate``.
    """
    if isinstance(log_w, WeightedSampleSet):
        log_w = log_w.log_w
    arr = np.asarray(log_w, dtype=float)
    if np.isnan(arr).any():
        raise ContractViolationError("log weights contain NaN")

    if scope == "global":
        groups = arr.reshape(1, -1)
    elif scope == "local":
        groups = arr.reshape(1, -1) if arr.ndim == 1 else arr.reshape(arr.shape[0], -1)
    else:
        raise ContractViolationError(f"unknown normalisation scope '{scope}'")

    totals = logsumexp(groups, axis=1, keepdims=True)
    degenerate = ~np.isfinite(totals[:, 0])
    with np.errstate(invalid="ignore"):
        weights = np.exp(groups - totals)
    if degenerate.any():
        weights[degenerate] = 1.0 / groups.shape[1]
    return NormalizedWeights(weights=weights.reshape(arr.shape), degenerate=degenerate)


def effective_sample_size(normalized: ArrayLike) -> float:
    w = np.asarray(normalized, dtype=float).ravel()
    return float(1.0 / np.sum(w * w))


@dataclass
class EstimateAccumulator:
    """Streaming sums of w, w*x and the sample count, kept in a shifted scale.

    Sums are stored relative to ``exp(log_shift)`` (the largest log weight
    seen) so that 20-dimensional weights neither overflow nor underflow.
    """

    dim: int
    n_proposals: int = 1
    log_shift: float = -math.inf
    sum_w: float = 0.0
    sum_wx: NDArray[np.float64] = field(default=None)
    count: int = 0
    archive: list[WeightedSampleSet] | None = None

    def __post_init__(self):
        if self.sum_wx is None:
            self.sum_wx = np.zeros(self.dim)

    @classmethod
    def with_archive(cls, dim: int, n_proposals: int = 1) -> "EstimateAccumulator":
        return cls(dim=dim, n_proposals=n_proposals, archive=[])

    def _rescale(self, new_shift: float) -> None:
        if new_shift > self.log_shift:
            factor = math.exp(self.log_shift - new_shift)
            self.sum_w *= factor
            self.sum_wx = self.sum_wx * factor
            self.log_shift = new_shift

    def absorb_arrays(self, points: ArrayLike, log_w: ArrayLike) -> None:
        points = np.asarray(points, dtype=float).reshape(-1, self.dim)
        log_w = np.asarray(log_w, dtype=float).ravel()
        if points.shape[0] != log_w.shape[0]:
            raise ContractViolationError("points and weights differ in length")
        self.count += log_w.shape[0]

        finite = log_w > -math.inf
        if not finite.any():
            return
        self._rescale(float(log_w[finite].max()))
        w = np.exp(log_w[finite] - self.log_shift)
        self.sum_w += float(w.sum())
        self.sum_wx = self.sum_wx + w @ points[finite]

    def absorb(self, samples: WeightedSampleSet) -> None:
        self.n_proposals = samples.n_proposals
        self.absorb_arrays(samples.flat_points(), samples.log_w)
        if self.archive is not None:
            self.archive.append(samples)

    def merge(self, other: "EstimateAccumulator") -> "EstimateAccumulator":
        if other.dim != self.dim:
            raise ContractViolationError("cannot merge accumulators of different dimension")
        merged = EstimateAccumulator(dim=self.dim, n_proposals=self.n_proposals)
        for part in (self, other):
            merged.count += part.count
            if part.sum_w > 0.0:
                merged._rescale(part.log_shift)
                factor = math.exp(part.log_shift - merged.log_shift)
                merged.sum_w += part.sum_w * factor
                merged.sum_wx = merged.sum_wx + part.sum_wx * factor
        return merged

    @property
    def degenerate(self) -> bool:
        return self.sum_w == 0.0

    @property
    def log_total_weight(self) -> float:
        if self.sum_w == 0.0:
            return -math.inf
        return math.log(self.sum_w) + self.log_shift


def _require_samples(acc: EstimateAccumulator) -> None:
    if acc.count < 1:
        raise ContractViolationError("accumulator has not absorbed any sample")


def snis_estimate(acc: EstimateAccumulator) -> NDArray[np.float64]:
    """Self-normalised estimate of E[x]: sum w x / sum w."""
    _require_samples(acc)
    if acc.degenerate:
        raise DegenerateEstimateError("total importance weight is zero")
    return acc.sum_wx / acc.sum_w


def log_z_estimate(
    acc: EstimateAccumulator, include_mixture_factor: bool = True
) -> float:
    """log Z-hat = log[(1 / count) sum w]; ``-inf`` when every weight is zero.

    With ``include_mixture_factor=False`` the DM denominator is read as the
    plain sum of proposal densities, which divides Z-hat by N.
    """
    _require_samples(acc)
    value = acc.log_total_weight - math.log(acc.count)
    if not include_mixture_factor:
        value -= math.log(acc.n_proposals)
    return value


def z_estimate(acc: EstimateAccumulator, include_mixture_factor: bool = True) -> float:
    return math.exp(log_z_estimate(acc, include_mixture_factor))


def uis_estimate(acc: EstimateAccumulator, log_Z: float) -> NDArray[np.float64]:
    """Unnormalised estimate of E[x] given the true normalising constant."""
    _require_samples(acc)
    if acc.degenerate:
        return np.zeros(acc.dim)
    return acc.sum_wx * math.exp(acc.log_shift - math.log(acc.count) - log_Z)
