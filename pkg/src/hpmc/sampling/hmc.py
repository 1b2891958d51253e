"""Leapfrog integration and one Hamiltonian Monte Carlo transition for N parallel chains.

Unit mass matrix, fixed (step_size, n_leapfrog), momentum fully resampled on
every call, standard Metropolis correction. No step-size adaptation. On a
Gaussian of variance c the integrator is stable only for step_size < 2 sqrt(c);
larger steps blow up and every move is rejected.
"""

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field

from .counters import EvalCounters
from .metropolis import metropolis_accept
from .targets import TargetDensity, as_batch

GradientMap = Callable[[NDArray[np.float64]], NDArray[np.float64]]


class HmcParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    step_size: float = Field(default=5.0, gt=0)
    n_leapfrog: int = Field(default=50, ge=1)


@dataclass(frozen=True)
class ChainState:
    """Positions of N chains with log pi and its gradient cached at each position."""

    position: NDArray[np.float64]  # (N, d)
    log_pi: NDArray[np.float64]  # (N,)
    grad: NDArray[np.float64]  # (N, d)

    @classmethod
    def initialize(
        cls,
        target: TargetDensity,
        positions: ArrayLike,
        counters: EvalCounters | None = None,
    ) -> "ChainState":
        points, _ = as_batch(positions, target.dim)
        log_pi = np.asarray(target.log_density(points))
        grad = target.grad_log_density(points)
        if counters is not None:
            counters.setup_density_evals += points.shape[0]
            counters.setup_gradient_evals += points.shape[0]
        return cls(position=points.copy(), log_pi=log_pi, grad=grad)

    @property
    def size(self) -> int:
        return self.position.shape[0]


@dataclass(frozen=True)
class LeapfrogResult:
    position: NDArray[np.float64]
    momentum: NDArray[np.float64]
    grad: NDArray[np.float64]  # gradient of log pi at the final position
    gradient_evals: int
    diverged: NDArray[np.bool_]


def leapfrog(
    q: ArrayLike,
    p: ArrayLike,
    params: HmcParams,
    grad: GradientMap,
    initial_grad: NDArray[np.float64] | None = None,
) -> LeapfrogResult:
    """L half-kick / drift / half-kick steps of the Hamiltonian with H = -log pi(q) + |p|^2 / 2.

    ``grad`` is the gradient of log pi. With ``initial_grad`` supplied, the
    integrator makes exactly L fresh gradient calls, else L + 1.
    """
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    eps = params.step_size
    n_evals = 0

    if initial_grad is None:
        g = grad(q)
        n_evals += 1
    else:
        g = np.asarray(initial_grad, dtype=float)

    with np.errstate(over="ignore", invalid="ignore"):
        p = p + 0.5 * eps * g
        for step in range(params.n_leapfrog):
            q = q + eps * p
            g = grad(q)
            n_evals += 1
            kick = eps if step < params.n_leapfrog - 1 else 0.5 * eps
            p = p + kick * g

    finite = np.isfinite(q) & np.isfinite(p) & np.isfinite(g)
    diverged = ~finite.all(axis=-1) if finite.ndim > 1 else ~finite.all()
    return LeapfrogResult(
        position=q, momentum=p, grad=g, gradient_evals=n_evals, diverged=diverged
    )


def _guarded_gradient(target: TargetDensity, counters: EvalCounters | None) -> GradientMap:
    """Gradient map that skips non-finite rows (NaN out) and charges only evaluated rows."""

    def gradient(q: NDArray[np.float64]) -> NDArray[np.float64]:
        ok = np.isfinite(q).all(axis=1)
        out = np.full_like(q, np.nan)
        if ok.any():
            with np.errstate(over="ignore", invalid="ignore"):
                out[ok] = target.grad_log_density(q[ok])
            if counters is not None:
                counters.target_gradient_evals += int(ok.sum())
        return out

    return gradient


@dataclass(frozen=True)
class HmcTransition:
    state: ChainState
    accepted: NDArray[np.bool_]
    diverged: NDArray[np.bool_]
    accept_prob: NDArray[np.float64]


def hmc_step(
    state: ChainState,
    target: TargetDensity,
    params: HmcParams,
    rng: np.random.Generator,
    counters: EvalCounters | None = None,
) -> HmcTransition:
    """Advance every chain by one HMC transition.

    Charges one density evaluation per chain at the proposed point and L
    gradient evaluations per chain. Rejected and diverged chains keep their
    previous position and caches unchanged.
    """
    p0 = rng.standard_normal(state.position.shape)
    lf = leapfrog(
        state.position,
        p0,
        params,
        _guarded_gradient(target, counters),
        initial_grad=state.grad,
    )

    proposed_ok = ~lf.diverged
    log_pi_new = np.full(state.size, -np.inf)
    if proposed_ok.any():
        with np.errstate(over="ignore", invalid="ignore"):
            log_pi_new[proposed_ok] = target.log_density(lf.position[proposed_ok])
        if counters is not None:
            counters.target_density_evals += int(proposed_ok.sum())

    with np.errstate(over="ignore", invalid="ignore"):
        h_current = -state.log_pi + 0.5 * np.sum(p0 * p0, axis=1)
        h_proposed = -log_pi_new + 0.5 * np.sum(lf.momentum**2, axis=1)
        log_ratio = h_current - h_proposed

    diverged = lf.diverged | ~np.isfinite(h_proposed)
    log_ratio = np.where(diverged, -np.inf, log_ratio)
    accept, accept_prob = metropolis_accept(log_ratio, rng)

    keep = ~accept
    new_state = ChainState(
        position=np.where(keep[:, None], state.position, lf.position),
        log_pi=np.where(keep, state.log_pi, log_pi_new),
        grad=np.where(keep[:, None], state.grad, lf.grad),
    )
    return HmcTransition(
        state=new_state, accepted=accept, diverged=diverged, accept_prob=accept_prob
    )
