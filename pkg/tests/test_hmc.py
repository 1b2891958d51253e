import math

import numpy as np
import pytest
from pydantic import ValidationError

from hpmc.sampling.counters import EvalCounters
from hpmc.sampling.hmc import ChainState, HmcParams, hmc_step, leapfrog
from hpmc.sampling.targets import TargetDensity, build_benchmark_target


def _standard_normal_grad(q):
    return -q


def _flat_target(dim):
    return TargetDensity(
        name="flat",
        dim=dim,
        log_density_fn=lambda x: np.zeros(x.shape[0]),
        grad_log_density_fn=np.zeros_like,
    )


def test_params_validation():
    with pytest.raises(ValidationError):
        HmcParams(step_size=0.0)
    with pytest.raises(ValidationError):
        HmcParams(n_leapfrog=0)


def test_free_particle_drift():
    params = HmcParams(step_size=0.3, n_leapfrog=7)
    q, p = np.array([1.0, -2.0]), np.array([0.5, 1.5])
    out = leapfrog(q, p, params, np.zeros_like)
    np.testing.assert_allclose(out.position, q + 0.3 * 7 * p, rtol=1e-12)
    np.testing.assert_allclose(out.momentum, p, rtol=1e-14)
    assert out.gradient_evals == 8
    assert not out.diverged


def test_cached_initial_gradient_saves_one_evaluation():
    params = HmcParams(step_size=0.1, n_leapfrog=5)
    q = np.array([[0.3]])
    out = leapfrog(q, np.array([[1.0]]), params, _standard_normal_grad, initial_grad=-q)
    assert out.gradient_evals == 5


def test_leapfrog_reversibility():
    target = build_benchmark_target("toy5")
    params = HmcParams(step_size=0.05, n_leapfrog=40)
    q, p = np.array([[-9.0, -9.5]]), np.array([[0.7, -1.2]])
    fwd = leapfrog(q, p, params, target.grad_log_density)
    back = leapfrog(fwd.position, -fwd.momentum, params, target.grad_log_density)
    np.testing.assert_allclose(back.position, q, atol=1e-10)
    np.testing.assert_allclose(-back.momentum, p, atol=1e-10)


def test_energy_error_is_second_order():
    def energy_error(eps):
        n = int(round(1.0 / eps))
        params = HmcParams(step_size=eps, n_leapfrog=n)
        out = leapfrog(np.array([1.0]), np.array([0.5]), params, _standard_normal_grad)
        h0 = 0.5 * (1.0 + 0.25)
        h1 = 0.5 * (out.position[0] ** 2 + out.momentum[0] ** 2)
        return abs(h1 - h0)

    ratio = energy_error(0.1) / energy_error(0.05)
    assert 3.0 < ratio < 5.0


def test_volume_preservation():
    params = HmcParams(step_size=0.2, n_leapfrog=3)
    target = build_benchmark_target("banana", {"b": 1.0, "sigma": 1.0, "dim": 2})

    def flow(z):
        out = leapfrog(z[:2], z[2:], params, target.grad_log_density)
        return np.concatenate([out.position, out.momentum])

    z0 = np.array([0.3, -0.4, 0.2, 0.1])
    h = 1e-6
    jac = np.empty((4, 4))
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        jac[:, i] = (flow(z0 + e) - flow(z0 - e)) / (2 * h)
    assert np.linalg.det(jac) == pytest.approx(1.0, abs=1e-6)


def test_flat_target_always_accepts_and_charges_counters():
    target = _flat_target(3)
    counters = EvalCounters()
    state = ChainState.initialize(target, np.zeros((4, 3)), counters)
    assert counters.setup_density_evals == 4
    params = HmcParams(step_size=0.1, n_leapfrog=10)
    out = hmc_step(state, target, params, np.random.default_rng(0), counters)
    assert out.accepted.all()
    assert counters.target_density_evals == 4
    assert counters.target_gradient_evals == 4 * 10
    moved = np.linalg.norm(out.state.position, axis=1)
    assert (moved > 0).all()


def test_high_acceptance_on_standard_normal():
    target = build_benchmark_target("gaussian", {"mean": 0.0})
    params = HmcParams(step_size=0.1, n_leapfrog=50)
    rng = np.random.default_rng(1)
    state = ChainState.initialize(target, np.zeros((100, 1)))
    accepted = 0
    for _ in range(100):
        out = hmc_step(state, target, params, rng)
        accepted += out.accepted.sum()
        state = out.state
    assert accepted / 10_000 > 0.95


def test_chain_mean_is_stationary():
    target = build_benchmark_target("gaussian", {"mean": 3.0})
    params = HmcParams(step_size=0.3, n_leapfrog=5)
    rng = np.random.default_rng(2)
    state = ChainState.initialize(target, np.full((50, 1), 3.0))
    draws = []
    for _ in range(2_000):
        state = hmc_step(state, target, params, rng).state
        draws.append(state.position[:, 0].copy())
    draws = np.array(draws)
    chain_means = draws.mean(axis=0)
    stderr = chain_means.std(ddof=1) / math.sqrt(chain_means.size)
    assert abs(chain_means.mean() - 3.0) < 4 * stderr


def test_rejected_step_keeps_state_bit_identical():
    target = build_benchmark_target("gaussian", {"mean": [0.0, 0.0]})
    # a huge step ejects the trajectory, so the move is rejected
    params = HmcParams(step_size=50.0, n_leapfrog=20)
    state = ChainState.initialize(target, np.array([[0.1, -0.2], [0.3, 0.4]]))
    out = hmc_step(state, target, params, np.random.default_rng(3))
    assert not out.accepted.any()
    np.testing.assert_array_equal(out.state.position, state.position)
    np.testing.assert_array_equal(out.state.log_pi, state.log_pi)
    np.testing.assert_array_equal(out.state.grad, state.grad)


def test_divergence_is_rejected_and_flagged():
    target = build_benchmark_target("banana", {"b": 3.0, "sigma": 1.0, "dim": 2})
    params = HmcParams(step_size=5.0, n_leapfrog=50)
    counters = EvalCounters()
    state = ChainState.initialize(target, np.array([[2.0, 1.0]]))
    out = hmc_step(state, target, params, np.random.default_rng(4), counters)
    assert out.diverged.all()
    assert not out.accepted.any()
    # no density call is made at a non-finite proposal
    assert counters.target_density_evals == 0
    np.testing.assert_array_equal(out.state.position, state.position)


def test_steps_beyond_the_stable_range_are_all_rejected():
    # the bimodal modes have variance 5: the leapfrog is stable only below 2 sqrt(5)
    target = build_benchmark_target("bimodal20")
    start = 8.0 + math.sqrt(5.0) * np.random.default_rng(5).standard_normal((200, 20))
    state = ChainState.initialize(target, start)
    wide = hmc_step(state, target, HmcParams(step_size=5.0, n_leapfrog=50), np.random.default_rng(6))
    stable = hmc_step(state, target, HmcParams(step_size=1.0, n_leapfrog=50), np.random.default_rng(6))
    assert not wide.accepted.any()
    assert stable.accepted.mean() > 0.8


def test_transitions_satisfy_detailed_balance():
    target = build_benchmark_target("gaussian", {"mean": 0.0})
    params = HmcParams(step_size=0.4, n_leapfrog=4)
    rng = np.random.default_rng(8)
    state = ChainState.initialize(target, rng.standard_normal((200, 1)))
    edges = np.array([-1.0, 0.0, 1.0])
    flows = np.zeros((4, 4))
    before = np.digitize(state.position[:, 0], edges)
    for _ in range(500):
        state = hmc_step(state, target, params, rng).state
        after = np.digitize(state.position[:, 0], edges)
        np.add.at(flows, (before, after), 1)
        before = after

    # stationary flow a -> b equals flow b -> a
    for a, b in [(0, 1), (1, 2), (2, 3), (0, 2), (1, 3)]:
        forward, backward = flows[a, b], flows[b, a]
        assert forward > 100
        assert abs(forward - backward) < 4 * math.sqrt(forward + backward)
