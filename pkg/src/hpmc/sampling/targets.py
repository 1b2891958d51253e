"""Unnormalised benchmark target densities with analytic gradients.

All densities work in the log domain on batches of points shaped ``(m, d)``;
a single point of shape ``(d,)`` is accepted everywhere and returns scalars.
"""

import dataclasses
import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg
from scipy.special import logsumexp

from ..errors import ContractViolationError, InvalidInputError, InvalidSpecError
from .counters import EvalCounters

LOG_2PI = math.log(2.0 * math.pi)

LogDensityFn = Callable[[NDArray[np.float64]], NDArray[np.float64]]
GradientFn = Callable[[NDArray[np.float64]], NDArray[np.float64]]

BENCHMARK_TARGETS = ("toy5", "bimodal20", "banana", "gaussian", "bimodal1d")

TOY5_MEANS = np.array(
    [[-10.0, -10.0], [0.0, 16.0], [13.0, 8.0], [-9.0, 7.0], [14.0, -14.0]]
)
TOY5_COVARIANCES = np.array(
    [
        [[2.0, 0.6], [0.6, 1.0]],
        [[2.0, -0.4], [-0.4, 2.0]],
        [[2.0, 0.8], [0.8, 2.0]],
        [[3.0, 0.0], [0.0, 0.5]],
        [[2.0, -0.1], [-0.1, 2.0]],
    ]
)


def as_batch(x: ArrayLike, dim: int) -> tuple[NDArray[np.float64], bool]:
    """Return ``x`` as an ``(m, dim)`` array and whether it was a single point."""
    points = np.asarray(x, dtype=float)
    single = points.ndim == 1
    if single:
        points = points[None, :]
    if points.ndim != 2 or points.shape[1] != dim:
        raise ContractViolationError(
            f"expected points of dimension {dim}, got shape {np.shape(x)}"
        )
    if np.isnan(points).any():
        raise InvalidInputError("point contains NaN")
    return points, single


@dataclass(frozen=True)
class GaussianMixtureSpec:
    weights: NDArray[np.float64]
    means: NDArray[np.float64]
    covariances: NDArray[np.float64]

    _chol: NDArray[np.float64] = field(init=False, repr=False, compare=False)
    _log_norm: NDArray[np.float64] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        means = np.asarray(self.means, dtype=float)
        if means.ndim == 1:
            means = means[None, :]
        covariances = np.asarray(self.covariances, dtype=float)
        if covariances.ndim == 2:
            covariances = covariances[None, :, :]

        n_comp, dim = means.shape
        if weights.shape != (n_comp,) or covariances.shape != (n_comp, dim, dim):
            raise InvalidSpecError(
                f"mixture shapes disagree: weights {weights.shape}, "
                f"means {means.shape}, covariances {covariances.shape}"
            )
        if (weights < 0).any() or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidSpecError("mixture weights must lie on the simplex")

        chols = []
        for i, cov in enumerate(covariances):
            if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
                raise InvalidSpecError(f"covariance {i} is not symmetric")
            try:
                chols.append(linalg.cholesky(cov, lower=True))
            except linalg.LinAlgError as e:
                raise InvalidSpecError(
                    f"covariance {i} is not positive definite"
                ) from e
        chol = np.stack(chols)
        log_det = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)

        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covariances)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_log_norm", -0.5 * (dim * LOG_2PI + log_det))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def mean(self) -> NDArray[np.float64]:
        return self.weights @ self.means

    def component_log_terms(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        """``log w_i + log N(x; mu_i, Sigma_i)`` for every point and component, ``(m, C)``."""
        terms = np.empty((points.shape[0], self.n_components))
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        for i in range(self.n_components):
            diff = points - self.means[i]
            z = linalg.solve_triangular(self._chol[i], diff.T, lower=True)
            terms[:, i] = log_w[i] + self._log_norm[i] - 0.5 * np.sum(z * z, axis=0)
        return terms

    def mahalanobis_sq(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        """Squared Mahalanobis distance of each point to each component, ``(m, C)``."""
        out = np.empty((points.shape[0], self.n_components))
        for i in range(self.n_components):
            z = linalg.solve_triangular(
                self._chol[i], (points - self.means[i]).T, lower=True
            )
            out[:, i] = np.sum(z * z, axis=0)
        return out

    def log_density(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        # sorted accumulation makes the sum independent of component order
        terms = np.sort(self.component_log_terms(points), axis=1)
        return logsumexp(terms, axis=1)

    def grad_log_density(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        terms = self.component_log_terms(points)
        resp = np.exp(terms - logsumexp(terms, axis=1, keepdims=True))
        grad = np.zeros_like(points)
        for i in range(self.n_components):
            diff = points - self.means[i]
            precision_diff = linalg.cho_solve((self._chol[i], True), diff.T).T
            grad -= resp[:, i : i + 1] * precision_diff
        return grad


@dataclass(frozen=True)
class BananaSpec:
    b: float = 3.0
    sigma: float = 1.0
    dim: int = 2

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidSpecError(f"banana sigma must be positive, got {self.sigma}")
        if self.dim < 2:
            raise InvalidSpecError(f"banana dim must be at least 2, got {self.dim}")

    def log_density(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        s2 = self.sigma**2
        x1, x2 = points[:, 0], points[:, 1]
        bent = x2 + self.b * (x1 * x1 - s2)
        rest = np.sum(points[:, 2:] ** 2, axis=1)
        return -(x1 * x1 + bent * bent + rest) / (2.0 * s2)

    def grad_log_density(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        s2 = self.sigma**2
        x1, x2 = points[:, 0], points[:, 1]
        bent = x2 + self.b * (x1 * x1 - s2)
        grad = -points / s2
        grad[:, 0] = -(x1 + 2.0 * self.b * x1 * bent) / s2
        grad[:, 1] = -bent / s2
        return grad

    @property
    def log_normalizer(self) -> float:
        # the shear x2 -> x2 + b(x1^2 - s^2) has unit Jacobian
        return 0.5 * self.dim * math.log(2.0 * math.pi * self.sigma**2)


@dataclass(frozen=True)
class TargetDensity:
    """Evaluable unnormalised log-density with its gradient and known moments.

    Immutable; evaluation counters belong to the caller and are passed to
    :func:`evaluate`.
    """

    name: str
    dim: int
    log_density_fn: LogDensityFn = field(repr=False)
    grad_log_density_fn: GradientFn = field(repr=False)
    true_mean: NDArray[np.float64] | None = None
    true_log_Z: float | None = None
    log_scale: float = 0.0
    mixture: GaussianMixtureSpec | None = field(default=None, repr=False)

    def log_density(self, x: ArrayLike) -> NDArray[np.float64] | float:
        points, single = as_batch(x, self.dim)
        values = self.log_density_fn(points)
        if self.log_scale != 0.0:
            values = values + self.log_scale
        return float(values[0]) if single else values

    def grad_log_density(self, x: ArrayLike) -> NDArray[np.float64]:
        points, single = as_batch(x, self.dim)
        grad = self.grad_log_density_fn(points)
        return grad[0] if single else grad

    def scaled(self, log_c: float) -> "TargetDensity":
        """The same target with its unnormalised density multiplied by ``exp(log_c)``."""
        return dataclasses.replace(
            self,
            log_scale=self.log_scale + log_c,
            true_log_Z=None if self.true_log_Z is None else self.true_log_Z + log_c,
        )


def evaluate(
    target: TargetDensity,
    x: ArrayLike,
    want_grad: bool = False,
    counters: EvalCounters | None = None,
) -> tuple[Any, Any]:
    """Return ``(log pi(x), grad log pi(x) or None)`` and charge the caller's counters."""
    points, single = as_batch(x, target.dim)
    log_pi = target.log_density(points)
    grad = target.grad_log_density(points) if want_grad else None

    if counters is not None:
        counters.target_density_evals += points.shape[0]
        if want_grad:
            counters.target_gradient_evals += points.shape[0]

    if single:
        return float(log_pi[0]), None if grad is None else grad[0]
    return log_pi, grad


def log_mixture_density(spec: GaussianMixtureSpec, x: ArrayLike):
    """``log sum_i w_i N(x; mu_i, Sigma_i)`` via log-sum-exp."""
    points, single = as_batch(x, spec.dim)
    values = spec.log_density(points)
    return float(values[0]) if single else values


def mixture_target(spec: GaussianMixtureSpec, name: str) -> TargetDensity:
    return TargetDensity(
        name=name,
        dim=spec.dim,
        log_density_fn=spec.log_density,
        grad_log_density_fn=spec.grad_log_density,
        true_mean=spec.mean,
        true_log_Z=0.0,
        mixture=spec,
    )


def banana_target(spec: BananaSpec) -> TargetDensity:
    return TargetDensity(
        name="banana",
        dim=spec.dim,
        log_density_fn=spec.log_density,
        grad_log_density_fn=spec.grad_log_density,
        true_mean=np.zeros(spec.dim),
        true_log_Z=spec.log_normalizer,
    )


def gaussian_target(
    mean: ArrayLike, sigma: float = 1.0, unnormalized: bool = False
) -> TargetDensity:
    """Isotropic Gaussian; ``unnormalized`` keeps only the kernel exp(-|x-m|^2 / 2 sigma^2)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if not sigma > 0:
        raise InvalidSpecError(f"gaussian sigma must be positive, got {sigma}")
    dim = mean.shape[0]
    s2 = sigma * sigma
    log_z = 0.5 * dim * math.log(2.0 * math.pi * s2)
    offset = 0.0 if unnormalized else -log_z

    def log_density(points):
        return offset - 0.5 * np.sum((points - mean) ** 2, axis=1) / s2

    def grad_log_density(points):
        return -(points - mean) / s2

    return TargetDensity(
        name="gaussian",
        dim=dim,
        log_density_fn=log_density,
        grad_log_density_fn=grad_log_density,
        true_mean=mean.copy(),
        true_log_Z=log_z if unnormalized else 0.0,
    )


def _toy5_spec() -> GaussianMixtureSpec:
    return GaussianMixtureSpec(
        weights=np.full(5, 0.2), means=TOY5_MEANS, covariances=TOY5_COVARIANCES
    )


def _bimodal_spec(dim: int, separation: float, c: float) -> GaussianMixtureSpec:
    if dim < 1 or not c > 0:
        raise InvalidSpecError("bimodal target needs dim >= 1 and c > 0")
    cov = c * np.eye(dim)
    return GaussianMixtureSpec(
        weights=np.array([0.5, 0.5]),
        means=np.stack([np.full(dim, separation), np.full(dim, -separation)]),
        covariances=np.stack([cov, cov]),
    )


def build_benchmark_target(
    name: str, params: Mapping[str, Any] | GaussianMixtureSpec | BananaSpec | None = None
) -> TargetDensity:
    """Build one of the named benchmark targets.

    ``params`` is either the matching spec object or a mapping of overrides:
    ``bimodal20`` takes ``dim``, ``separation`` and ``c``; ``banana`` takes
    ``b``, ``sigma`` and ``dim``; ``gaussian`` takes ``mean``, ``dim``,
    ``sigma`` and ``unnormalized``.
    """
    if isinstance(params, GaussianMixtureSpec):
        return mixture_target(params, name)
    if isinstance(params, BananaSpec):
        return banana_target(params)

    params = dict(params or {})
    try:
        match name:
            case "toy5":
                return mixture_target(_toy5_spec(), "toy5")
            case "bimodal20":
                spec = _bimodal_spec(
                    int(params.get("dim", 20)),
                    float(params.get("separation", 8.0)),
                    float(params.get("c", 5.0)),
                )
                return mixture_target(spec, "bimodal20")
            case "bimodal1d":
                spec = GaussianMixtureSpec(
                    weights=np.array([0.5, 0.5]),
                    means=np.array([[-3.0], [3.0]]),
                    covariances=np.ones((2, 1, 1)),
                )
                return mixture_target(spec, "bimodal1d")
            case "banana":
                return banana_target(
                    BananaSpec(
                        b=float(params.get("b", 3.0)),
                        sigma=float(params.get("sigma", 1.0)),
                        dim=int(params.get("dim", 2)),
                    )
                )
            case "gaussian":
                mean = params.get("mean", 0.0)
                dim = int(params.get("dim", np.size(mean)))
                mean = np.broadcast_to(np.asarray(mean, dtype=float), (dim,))
                return gaussian_target(
                    mean,
                    sigma=float(params.get("sigma", 1.0)),
                    unnormalized=bool(params.get("unnormalized", False)),
                )
    except (TypeError, ValueError) as e:
        raise InvalidSpecError(f"bad parameters for target '{name}': {e}") from e

    raise InvalidSpecError(
        f"unknown target '{name}'; expected one of {', '.join(BENCHMARK_TARGETS)}"
    )
