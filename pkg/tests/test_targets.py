import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from hpmc.errors import ContractViolationError, InvalidInputError, InvalidSpecError
from hpmc.sampling.counters import EvalCounters
from hpmc.sampling.targets import (
    TOY5_COVARIANCES,
    TOY5_MEANS,
    BananaSpec,
    GaussianMixtureSpec,
    build_benchmark_target,
    evaluate,
    log_mixture_density,
)


def _finite_difference_grad(target, x, h=1e-5):
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (target.log_density(x + e) - target.log_density(x - e)) / (2 * h)
    return grad


def test_toy5_matches_scipy_mixture():
    target = build_benchmark_target("toy5")
    points = np.array([[0.0, 0.0], [-10.0, -10.0], [13.5, 7.0], [30.0, -2.0]])
    expected = np.log(
        sum(
            0.2 * multivariate_normal(mean=m, cov=c).pdf(points)
            for m, c in zip(TOY5_MEANS, TOY5_COVARIANCES)
        )
    )
    np.testing.assert_allclose(target.log_density(points), expected, rtol=1e-10)
    np.testing.assert_allclose(target.true_mean, [1.6, 1.4])
    assert target.true_log_Z == 0.0


def test_single_point_returns_scalar():
    target = build_benchmark_target("toy5")
    value = target.log_density(np.array([0.0, 16.0]))
    assert isinstance(value, float)
    log_pi, grad = evaluate(target, np.array([0.0, 16.0]), want_grad=True)
    assert log_pi == value
    assert grad.shape == (2,)


def test_banana_value_at_origin():
    target = build_benchmark_target("banana", {"b": 3.0, "sigma": 1.0, "dim": 2})
    # bent coordinate is b * (0 - 1) = -3, so log pi = -(0 + 9) / 2
    assert target.log_density(np.zeros(2)) == pytest.approx(-4.5, abs=1e-12)
    assert target.true_log_Z == pytest.approx(math.log(2 * math.pi))


def test_banana_extra_coordinates_are_standard_gaussian():
    target = build_benchmark_target("banana", {"b": 3.0, "sigma": 1.0, "dim": 5})
    x = np.array([1.0, 0.0, 0.5, -1.0, 2.0])
    assert target.log_density(x) == pytest.approx(-(1.0 + 0.25 + 1.0 + 4.0) / 2.0)
    assert target.true_log_Z == pytest.approx(2.5 * math.log(2 * math.pi))


@pytest.mark.parametrize(
    "name,params",
    [
        ("toy5", {}),
        ("banana", {"b": 3.0, "sigma": 1.0, "dim": 4}),
        ("bimodal20", {"dim": 3}),
        ("gaussian", {"mean": [1.0, -2.0], "sigma": 2.0}),
    ],
)
def test_gradients_match_finite_differences(name, params):
    target = build_benchmark_target(name, params)
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.normal(scale=2.0, size=target.dim)
        np.testing.assert_allclose(
            target.grad_log_density(x), _finite_difference_grad(target, x), rtol=1e-5, atol=1e-6
        )


def test_bimodal20_defaults():
    target = build_benchmark_target("bimodal20")
    assert target.dim == 20
    np.testing.assert_allclose(target.true_mean, np.zeros(20), atol=1e-12)
    assert target.mixture.n_components == 2
    np.testing.assert_allclose(target.mixture.means[0], np.full(20, 8.0))


def test_unnormalized_gaussian_log_z():
    target = build_benchmark_target("gaussian", {"mean": 0.0, "unnormalized": True})
    assert target.log_density(np.zeros(1)) == 0.0
    assert target.true_log_Z == pytest.approx(0.5 * math.log(2 * math.pi))


def test_scaled_target_shifts_log_density_and_log_z():
    target = build_benchmark_target("toy5")
    scaled = target.scaled(math.log(7.0))
    x = np.array([[1.0, 2.0], [-9.0, 7.0]])
    np.testing.assert_allclose(
        scaled.log_density(x) - target.log_density(x), math.log(7.0), rtol=0, atol=1e-12
    )
    assert scaled.true_log_Z == pytest.approx(math.log(7.0))


def test_mixture_density_independent_of_component_order():
    order = [3, 0, 4, 1, 2]
    a = GaussianMixtureSpec(np.full(5, 0.2), TOY5_MEANS, TOY5_COVARIANCES)
    b = GaussianMixtureSpec(np.full(5, 0.2), TOY5_MEANS[order], TOY5_COVARIANCES[order])
    x = np.random.default_rng(0).normal(scale=10.0, size=(50, 2))
    np.testing.assert_array_equal(log_mixture_density(a, x), log_mixture_density(b, x))


def test_evaluate_charges_counters():
    target = build_benchmark_target("toy5")
    counters = EvalCounters()
    evaluate(target, np.zeros((7, 2)), counters=counters)
    evaluate(target, np.zeros((3, 2)), want_grad=True, counters=counters)
    assert counters.target_density_evals == 10
    assert counters.target_gradient_evals == 3


def test_dimension_mismatch_is_contract_violation():
    target = build_benchmark_target("toy5")
    with pytest.raises(ContractViolationError):
        target.log_density(np.zeros(3))


def test_nan_point_is_invalid_input():
    target = build_benchmark_target("toy5")
    with pytest.raises(InvalidInputError):
        target.log_density(np.array([np.nan, 0.0]))


def test_non_positive_definite_covariance_rejected():
    with pytest.raises(InvalidSpecError):
        GaussianMixtureSpec(
            weights=np.array([1.0]),
            means=np.zeros((1, 2)),
            covariances=np.array([[[1.0, 2.0], [2.0, 1.0]]]),
        )


def test_weights_off_the_simplex_rejected():
    with pytest.raises(InvalidSpecError):
        GaussianMixtureSpec(
            weights=np.array([0.5, 0.6]),
            means=np.zeros((2, 1)),
            covariances=np.ones((2, 1, 1)),
        )


def test_unknown_target_and_bad_banana():
    with pytest.raises(InvalidSpecError):
        build_benchmark_target("rosenbrock")
    with pytest.raises(InvalidSpecError):
        BananaSpec(sigma=0.0)
    with pytest.raises(InvalidSpecError):
        build_benchmark_target("banana", {"dim": 1})
