"""Multinomial resampling: the inverse-CDF primitive, local (per proposal) and global schemes.

Every draw consumes one uniform and scans atoms in index order, so a seeded
generator reproduces the same indices; ties in the cumulative weights go to
the lower index and zero-weight atoms are never returned.
"""

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..errors import ContractViolationError
from .weighting import WeightedSampleSet, normalize

ResamplingScheme = Callable[
    [NDArray[np.float64], int, np.random.Generator], NDArray[np.intp]
]


@dataclass(frozen=True)
class RandomMeasure:
    atoms: NDArray[np.float64]  # (M, d)
    normalized_weights: NDArray[np.float64]  # (M,)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.asarray(self.normalized_weights, dtype=float).ravel()
        if atoms.shape[0] != weights.shape[0] or weights.shape[0] == 0:
            raise ContractViolationError(
                f"{atoms.shape[0]} atoms but {weights.shape[0]} weights"
            )
        _check_weights(weights)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "normalized_weights", weights)

    @classmethod
    def from_log_weights(cls, atoms: ArrayLike, log_w: ArrayLike) -> "RandomMeasure":
        return cls(atoms=atoms, normalized_weights=normalize(log_w, "global").weights)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]


def _check_weights(weights: NDArray[np.float64]) -> None:
    if np.isnan(weights).any() or (weights < 0).any():
        raise ContractViolationError("resampling weights must be non-negative numbers")
    if abs(weights.sum() - 1.0) > 1e-12:
        raise ContractViolationError(
            f"resampling weights sum to {weights.sum()!r}, not 1"
        )


def _inverse_cdf(
    weights: NDArray[np.float64], uniforms: NDArray[np.float64]
) -> NDArray[np.intp]:
    """Row-wise inverse CDF: for each row the first index whose cumulative weight exceeds u."""
    cdf = np.cumsum(weights, axis=-1)
    cdf = cdf / cdf[..., -1:]
    idx = np.sum(cdf[..., None, :] <= uniforms[..., :, None], axis=-1)
    # rounding can leave u above the last cumulative value; clamp to the last atom with mass
    last = weights.shape[-1] - 1 - np.argmax(weights[..., ::-1] > 0, axis=-1)
    return np.minimum(idx, np.asarray(last)[..., None])


def multinomial_indices(
    weights: NDArray[np.float64], count: int, rng: np.random.Generator
) -> NDArray[np.intp]:
    if count < 1:
        raise ContractViolationError(f"count must be at least 1, got {count}")
    weights = np.asarray(weights, dtype=float)
    _check_weights(weights)
    return _inverse_cdf(weights, rng.random(count))


def multinomial_draw(
    measure: RandomMeasure,
    count: int,
    rng: np.random.Generator,
    scheme: ResamplingScheme = multinomial_indices,
) -> NDArray[np.intp]:
    """``count`` i.i.d. atom indices from the categorical law of the measure."""
    return scheme(measure.normalized_weights, count, rng)


@dataclass(frozen=True)
class LocalResample:
    points: NDArray[np.float64]  # (N, d)
    log_pi: NDArray[np.float64]  # (N,)
    log_denominator: NDArray[np.float64]  # (N,)
    chosen: NDArray[np.intp]  # (N,) index k within each group
    degenerate: NDArray[np.bool_]  # (N,)
    scheme: str = "dm"


def local_resample(samples: WeightedSampleSet, rng: np.random.Generator) -> LocalResample:
    """Draw one location per proposal from its own K samples.

    Uses the within-group normalised weights; group n only ever yields one of
    proposal n's samples. Cached log pi values travel with the picks.
    """
    local = normalize(samples.log_w, "local")
    uniforms = rng.random(samples.n_proposals)
    chosen = _inverse_cdf(local.weights, uniforms[:, None])[:, 0]
    rows = np.arange(samples.n_proposals)
    return LocalResample(
        points=samples.points[rows, chosen],
        log_pi=samples.log_pi[rows, chosen],
        log_denominator=samples.log_denominator[rows, chosen],
        chosen=chosen,
        degenerate=local.degenerate,
        scheme=samples.scheme,
    )


def global_resample(
    measure: RandomMeasure, N: int, rng: np.random.Generator
) -> tuple[NDArray[np.float64], NDArray[np.intp]]:
    """N i.i.d. draws over all atoms jointly; returns the unweighted locations and their indices."""
    if not (measure.normalized_weights > 0).any():
        raise ContractViolationError("measure has no atom with positive weight")
    indices = multinomial_draw(measure, N, rng)
    return measure.atoms[indices], indices
