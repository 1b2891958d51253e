"""Full sampler runs under instrumented evaluation counters.

Every algorithm shares one iteration loop (:class:`PopulationSampler`):
sample K draws per proposal, weight them, fold them into the streaming
estimators, then adapt the proposal locations. Subclasses differ only in
how they weight and adapt; AMIS reweights its whole history and runs its
own loop.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from opentelemetry.trace import Status, StatusCode
from scipy.special import logsumexp

from ..config.experiment import (
    HYBRID_ALGORITHMS,
    LAYERED_ALGORITHMS,
    PMC_ALGORITHMS,
    Algorithm,
    SamplerConfig,
)
from ..errors import (
    ContractViolationError,
    DegenerateEstimateError,
    HpmcError,
    InvalidBudgetError,
    InvalidSpecError,
)
from ..sampling.adaptation import (
    PreliminaryLocationSet,
    cooperate_mixture,
    cooperate_resample,
    preliminary_from_locations,
    preliminary_from_samples,
    weight_preliminary,
)
from ..sampling.counters import EvalCounters
from ..sampling.hmc import ChainState
from ..sampling.metropolis import random_walk_step
from ..sampling.proposals import (
    ProposalPopulation,
    init_population,
    log_proposal_matrix,
    sample_population,
)
from ..sampling.resampling import RandomMeasure, global_resample, local_resample
from ..sampling.targets import TargetDensity, evaluate
from ..sampling.weighting import (
    EstimateAccumulator,
    NormalizedWeights,
    WeightedSampleSet,
    WeightScheme,
    compute_weights,
    effective_sample_size,
    log_z_estimate,
    normalize,
    snis_estimate,
    z_estimate,
)
from ..telemetry.tracing import TracingMixin, trace_function

# a location covers a mixture component within this squared Mahalanobis distance
MODE_RADIUS_SQ = 9.0
AMIS_SCALE_FLOOR = 1e-2


@dataclass
class IterationDiagnostics:
    iteration: int
    ess: float = math.nan
    degenerate_weights: bool = False
    adapted: bool = False
    hmc_accept_rate: float | None = None
    hmc_divergences: int = 0
    cooperation_accept_rate: float | None = None
    mh_accept_rate: float | None = None
    modes_covered: int | None = None
    error: str | None = None


@dataclass
class RunDiagnostics:
    iterations: list[IterationDiagnostics] = field(default_factory=list)
    # (T, C) per-iteration component coverage of the adapted locations; None for non-mixture targets
    mode_coverage: NDArray[np.bool_] | None = None
    estimate_error: str | None = None

    @property
    def degenerate_events(self) -> int:
        return sum(d.degenerate_weights for d in self.iterations)

    @property
    def hmc_divergences(self) -> int:
        return sum(d.hmc_divergences for d in self.iterations)

    @property
    def errors(self) -> list[str]:
        return [d.error for d in self.iterations if d.error is not None]

    @property
    def hmc_accept_rate(self) -> float | None:
        rates = [d.hmc_accept_rate for d in self.iterations if d.hmc_accept_rate is not None]
        return float(np.mean(rates)) if rates else None

    @property
    def mean_ess(self) -> float:
        values = [d.ess for d in self.iterations if not math.isnan(d.ess)]
        return float(np.mean(values)) if values else math.nan

    def modes_discovered_by(self, iteration: int) -> bool | None:
        """True when every component was covered at some iteration up to ``iteration``."""
        if self.mode_coverage is None:
            return None
        seen = self.mode_coverage[:iteration].any(axis=0)
        return bool(seen.all())

    @property
    def first_full_coverage(self) -> int | None:
        if self.mode_coverage is None:
            return None
        seen = np.logical_or.accumulate(self.mode_coverage, axis=0).all(axis=1)
        hits = np.flatnonzero(seen)
        return int(hits[0]) + 1 if hits.size else None


@dataclass(frozen=True)
class RunOutput:
    config: SamplerConfig
    target_name: str
    # (T, N, d) locations used at each iteration; None with keep_snapshots off
    snapshots: NDArray[np.float64] | None
    # (T, N) parent row in population t of each row of population t + 1
    lineage: NDArray[np.intp]
    mean_estimate: NDArray[np.float64]
    log_z: float
    z: float
    z_sum_denominator: float
    counters: EvalCounters
    counter_history: list[EvalCounters]
    diagnostics: RunDiagnostics
    accumulator: EstimateAccumulator = field(repr=False)

    @property
    def T(self) -> int:
        return self.config.T

    @property
    def n_samples(self) -> int:
        return self.accumulator.count


def mode_coverage(target: TargetDensity, locations: NDArray[np.float64]):
    """Per-component flag: some location lies within Mahalanobis distance 3."""
    if target.mixture is None:
        return None
    return (target.mixture.mahalanobis_sq(locations) <= MODE_RADIUS_SQ).any(axis=0)


def iteration_cost(algorithm: Algorithm, N: int, K: int) -> int:
    """Target evaluations one iteration is charged under the complexity table."""
    if N < 1 or K < 1:
        raise InvalidSpecError(f"N and K must be positive, got N={N}, K={K}")
    match algorithm:
        case "pmc_standard":
            return N
        case "dm_pmc" | "lr_pmc" | "gr_pmc":
            return K * N
        case "amis":
            return K
        case "pi_mais" | "hais":
            return K * N + N
        case "hpmc_mixture":
            return K * N + 3 * N
        case "hpmc_resample":
            return K * N + 2 * N
    raise InvalidSpecError(f"unknown algorithm '{algorithm}'")


def budget_iterations(algorithm: Algorithm, N: int, K: int, E: int) -> int:
    """Number of iterations T = floor(E / per-iteration cost) that fits budget E."""
    cost = iteration_cost(algorithm, N, K)
    if E < cost:
        raise InvalidBudgetError(
            f"budget of {E} target evaluations is below one {algorithm} iteration ({cost})"
        )
    return E // cost


@dataclass(frozen=True)
class Adaptation:
    locations: NDArray[np.float64]
    parents: NDArray[np.intp]


class PopulationSampler(TracingMixin):
    """Sample / weight / adapt loop shared by every population sampler."""

    weight_scheme: WeightScheme = "dm"

    def __init__(self, config: SamplerConfig, target: TargetDensity | None = None):
        super().__init__()
        self.config = config
        self.target = target or config.target.build()
        self.rng = config.rng()
        self.counters = EvalCounters()
        self.N = config.N
        self.K = config.K

    def initial_population(self) -> ProposalPopulation:
        c = self.config
        return init_population(
            self.N, self.target.dim, c.box_low, c.box_high, c.sigma, self.rng
        )

    def prepare(self, pop: ProposalPopulation) -> None:
        """One-off set-up before the first iteration."""

    def adapt(
        self,
        pop: ProposalPopulation,
        weighted: WeightedSampleSet,
        normalized: NormalizedWeights,
        diag: IterationDiagnostics,
    ) -> Adaptation | None:
        """Next locations, or None to keep the current population."""
        raise NotImplementedError

    def new_accumulator(self) -> EstimateAccumulator:
        if self.config.archive_samples:
            return EstimateAccumulator.with_archive(self.target.dim, self.N)
        return EstimateAccumulator(dim=self.target.dim, n_proposals=self.N)

    def run(self) -> RunOutput:
        c = self.config
        with self.tracer.start_as_current_span("sampler_run") as span:
            span.set_attribute("sampler.algorithm", c.algorithm)
            span.set_attribute("sampler.target", self.target.name)
            span.set_attribute("sampler.N", self.N)
            span.set_attribute("sampler.K", self.K)
            span.set_attribute("sampler.T", c.T)
            span.set_attribute("sampler.replicate", c.replicate)

            pop = self.initial_population()
            self.prepare(pop)
            acc = self.new_accumulator()
            diagnostics = RunDiagnostics()
            snapshots, lineage, coverage, history = [], [], [], []

            for t in range(1, c.T + 1):
                diag = IterationDiagnostics(iteration=t)
                diagnostics.iterations.append(diag)
                if c.keep_snapshots:
                    snapshots.append(pop.locations.copy())
                parents = np.arange(self.N)
                try:
                    samples = sample_population(pop, self.K, self.rng)
                    weighted = compute_weights(
                        samples, pop, self.target, self.weight_scheme, self.counters
                    )
                    normalized = normalize(weighted, "global")
                    diag.ess = effective_sample_size(normalized.weights)
                    if t > c.burn_in_iterations:
                        acc.absorb(weighted)

                    if normalized.any_degenerate:
                        diag.degenerate_weights = True
                        next_locations = pop.locations
                    else:
                        step = self.adapt(pop, weighted, normalized, diag)
                        if step is None:
                            next_locations = pop.locations
                        else:
                            diag.adapted = True
                            next_locations, parents = step.locations, step.parents
                except HpmcError as e:
                    if t == 1:
                        span.set_status(Status(StatusCode.ERROR, str(e)))
                        raise
                    diag.error = f"{type(e).__name__}: {e.detail}"
                    next_locations = pop.locations
                    parents = np.arange(self.N)

                pop = pop.with_locations(next_locations)
                lineage.append(np.asarray(parents, dtype=np.intp))
                covered = mode_coverage(self.target, pop.locations)
                if covered is not None:
                    coverage.append(covered)
                    diag.modes_covered = int(covered.sum())
                history.append(self.counters.snapshot())
                self.logger.debug(
                    f"{c.algorithm} t={t}: ess={diag.ess:.1f} adapted={diag.adapted} "
                    f"target_evals={self.counters.target_density_evals}"
                )

            if coverage:
                diagnostics.mode_coverage = np.stack(coverage)
            output = self._finish(acc, diagnostics, snapshots, lineage, history)
            span.set_attribute("sampler.degenerate_events", diagnostics.degenerate_events)
            span.set_attribute("sampler.hmc_divergences", diagnostics.hmc_divergences)
            span.set_attribute("sampler.mean_ess", diagnostics.mean_ess)
            span.set_attribute("counters.target_density_evals", self.counters.target_density_evals)
            span.set_attribute("counters.proposal_evals", self.counters.proposal_evals)
            span.set_status(Status(StatusCode.OK))
            return output

    def _finish(
        self,
        acc: EstimateAccumulator,
        diagnostics: RunDiagnostics,
        snapshots: list,
        lineage: list,
        history: list[EvalCounters],
    ) -> RunOutput:
        try:
            mean = snis_estimate(acc)
        except DegenerateEstimateError as e:
            diagnostics.estimate_error = e.detail
            mean = np.full(self.target.dim, np.nan)

        if diagnostics.degenerate_events or diagnostics.hmc_divergences or diagnostics.errors:
            self.log_and_trace(
                f"{self.config.algorithm} replicate {self.config.replicate}: "
                f"{diagnostics.degenerate_events} degenerate-weight iterations, "
                f"{diagnostics.hmc_divergences} HMC divergences, "
                f"{len(diagnostics.errors)} recovered errors",
                "warning",
            )

        log_z = log_z_estimate(acc)
        return RunOutput(
            config=self.config,
            target_name=self.target.name,
            snapshots=np.stack(snapshots) if snapshots else None,
            lineage=np.stack(lineage),
            mean_estimate=mean,
            log_z=log_z,
            z=math.exp(log_z),
            z_sum_denominator=z_estimate(acc, include_mixture_factor=False),
            counters=self.counters.snapshot(),
            counter_history=history,
            diagnostics=diagnostics,
            accumulator=acc,
        )


class ResamplingPmcSampler(PopulationSampler):
    """Standard PMC and the DM-weighted PMC baselines."""

    def __init__(self, config: SamplerConfig, target: TargetDensity | None = None):
        super().__init__(config, target)
        if config.algorithm == "pmc_standard":
            if config.K != 1:
                self.logger.info(f"pmc_standard draws one sample per proposal; ignoring K={config.K}")
            self.K = 1
            self.weight_scheme = "standard"

    def adapt(self, pop, weighted, normalized, diag) -> Adaptation | None:
        match self.config.algorithm:
            case "lr_pmc":
                picked = local_resample(weighted, self.rng)
                return Adaptation(picked.points, np.arange(self.N))
            case "dm_pmc":
                # one draw per proposal, resampled globally
                column = normalize(weighted.log_w[:, 0], "global")
                if column.any_degenerate:
                    diag.degenerate_weights = True
                    return None
                measure = RandomMeasure(weighted.points[:, 0, :], column.weights)
                locations, indices = global_resample(measure, self.N, self.rng)
                return Adaptation(locations, indices)
            case "pmc_standard" | "gr_pmc":
                measure = RandomMeasure(weighted.flat_points(), normalized.weights.ravel())
                locations, indices = global_resample(measure, self.N, self.rng)
                return Adaptation(locations, indices // weighted.k)
        raise ContractViolationError(f"not a resampling PMC algorithm: {self.config.algorithm}")


class HybridSampler(PopulationSampler):
    """HPMC adaptation: preliminary locations from samples (P) and HMC chains (Q), then cooperation.

    With both step toggles off this is the two-layered HAIS sampler: the
    next locations are the HMC chain positions.
    """

    def __init__(self, config: SamplerConfig, target: TargetDensity | None = None):
        super().__init__(config, target)
        self.use_local_resampling = config.use_local_resampling
        self.use_cooperation = config.use_cooperation
        if config.algorithm == "hais":
            self.use_local_resampling = False
            self.use_cooperation = False
        self.chains: ChainState | None = None

    def prepare(self, pop: ProposalPopulation) -> None:
        # chains start at the initial locations and persist across iterations
        self.chains = ChainState.initialize(self.target, pop.locations, self.counters)

    def adapt(self, pop, weighted, normalized, diag) -> Adaptation | None:
        P = (
            preliminary_from_samples(weighted, self.rng, self.counters)
            if self.use_local_resampling
            else None
        )
        transition = preliminary_from_locations(
            self.chains, self.target, self.config.hmc, self.rng, self.counters
        )
        self.chains = transition.state
        diag.hmc_accept_rate = float(transition.accepted.mean())
        diag.hmc_divergences = int(transition.diverged.sum())

        if not self.use_cooperation:
            return Adaptation(self.chains.position.copy(), np.arange(self.N))

        C = weight_preliminary(
            PreliminaryLocationSet.combine(P, self.chains), pop, self.counters
        )
        if C.degenerate:
            diag.degenerate_weights = True
            return None

        if self.config.algorithm == "hpmc_mixture":
            coop = cooperate_mixture(
                C,
                self.N,
                np.resize(pop.scales, C.size),
                self.target,
                self.rng,
                self.counters,
                self.config.incumbent_pairing,
            )
            diag.cooperation_accept_rate = float(coop.accepted.mean())
        else:
            coop = cooperate_resample(C, self.N, self.rng)
        # P rows and Q rows are both listed in proposal order
        return Adaptation(coop.locations, coop.source_index % self.N)


class LayeredMetropolisSampler(PopulationSampler):
    """Two-layered sampler: N random-walk Metropolis chains place the proposals."""

    def prepare(self, pop: ProposalPopulation) -> None:
        self.position = pop.locations.copy()
        self.log_pi = np.asarray(self.target.log_density(self.position))
        self.counters.setup_density_evals += self.N

    def adapt(self, pop, weighted, normalized, diag) -> Adaptation | None:
        step = random_walk_step(
            self.position,
            self.log_pi,
            self.target,
            self.config.mh_scale,
            self.rng,
            self.counters,
        )
        self.position, self.log_pi = step.position, step.log_pi
        diag.mh_accept_rate = float(step.accepted.mean())
        return Adaptation(self.position.copy(), np.arange(self.N))


class AmisSampler(PopulationSampler):
    """Single-proposal AMIS: temporal DM reweighting of every past sample and moment matching.

    At iteration t the K new draws are weighted against the equal mixture of
    all t proposals so far, and every earlier draw gains the density of the
    newest proposal in its denominator, so proposal evaluations total K T^2.
    """

    def __init__(self, config: SamplerConfig, target: TargetDensity | None = None):
        super().__init__(config, target)
        if config.N != 1:
            self.logger.info(f"amis adapts a single proposal; ignoring N={config.N}")
        self.N = 1

    def run(self) -> RunOutput:
        c = self.config
        with self.tracer.start_as_current_span("sampler_run") as span:
            span.set_attribute("sampler.algorithm", c.algorithm)
            span.set_attribute("sampler.target", self.target.name)
            span.set_attribute("sampler.K", self.K)
            span.set_attribute("sampler.T", c.T)

            pop = self.initial_population()
            diagnostics = RunDiagnostics()
            snapshots, lineage, coverage, history = [], [], [], []
            past = []  # every proposal used so far, as one-row populations
            points = np.empty((0, self.target.dim))
            log_pi = np.empty(0)
            log_den_sum = np.empty(0)  # log sum_tau q_tau(x)
            born = np.empty(0, dtype=int)

            for t in range(1, c.T + 1):
                diag = IterationDiagnostics(iteration=t)
                diagnostics.iterations.append(diag)
                if c.keep_snapshots:
                    snapshots.append(pop.locations.copy())
                try:
                    x = sample_population(pop, self.K, self.rng)[0]
                    x_log_pi, _ = evaluate(self.target, x, counters=self.counters)
                    if points.shape[0]:
                        newest = log_proposal_matrix(pop, points, self.counters)[:, 0]
                        log_den_sum = np.logaddexp(log_den_sum, newest)
                    past.append(pop)
                    history_pop = ProposalPopulation(
                        locations=np.concatenate([p.locations for p in past]),
                        scales=np.concatenate([p.scales for p in past]),
                    )
                    x_log_den = logsumexp(
                        log_proposal_matrix(history_pop, x, self.counters), axis=1
                    )
                    points = np.concatenate([points, x])
                    log_pi = np.concatenate([log_pi, x_log_pi])
                    log_den_sum = np.concatenate([log_den_sum, x_log_den])
                    born = np.concatenate([born, np.full(self.K, t)])

                    log_w = log_pi - (log_den_sum - math.log(t))
                    normalized = normalize(log_w, "global")
                    diag.ess = effective_sample_size(normalized.weights)
                    if normalized.any_degenerate:
                        diag.degenerate_weights = True
                        pop = pop.with_locations(pop.locations)
                    else:
                        pop = self._moment_match(pop, points, normalized.weights)
                        diag.adapted = True
                except HpmcError as e:
                    if t == 1:
                        span.set_status(Status(StatusCode.ERROR, str(e)))
                        raise
                    diag.error = f"{type(e).__name__}: {e.detail}"
                    pop = pop.with_locations(pop.locations)

                lineage.append(np.zeros(1, dtype=np.intp))
                covered = mode_coverage(self.target, pop.locations)
                if covered is not None:
                    coverage.append(covered)
                    diag.modes_covered = int(covered.sum())
                history.append(self.counters.snapshot())

            # estimators use the final temporal mixture for every kept sample
            acc = self.new_accumulator()
            keep = born > c.burn_in_iterations
            acc.absorb_arrays(
                points[keep], log_pi[keep] - (log_den_sum[keep] - math.log(len(past)))
            )
            if coverage:
                diagnostics.mode_coverage = np.stack(coverage)
            span.set_attribute("counters.proposal_evals", self.counters.proposal_evals)
            span.set_attribute("sampler.mean_ess", diagnostics.mean_ess)
            span.set_status(Status(StatusCode.OK))
            return self._finish(acc, diagnostics, snapshots, lineage, history)

    def _moment_match(
        self, pop: ProposalPopulation, points: NDArray[np.float64], weights: NDArray[np.float64]
    ) -> ProposalPopulation:
        mean = weights @ points
        variance = weights @ np.sum((points - mean) ** 2, axis=1) / points.shape[1]
        scale = max(math.sqrt(variance), AMIS_SCALE_FLOOR)
        return ProposalPopulation(
            locations=mean[None, :], scales=np.array([scale]), iteration=pop.iteration + 1
        )


def _require(config: SamplerConfig, allowed: tuple[str, ...]) -> None:
    if config.algorithm not in allowed:
        raise ContractViolationError(
            f"algorithm '{config.algorithm}' is not one of {', '.join(allowed)}"
        )


@trace_function("run_hpmc")
def run_hpmc(config: SamplerConfig, target: TargetDensity | None = None) -> RunOutput:
    _require(config, HYBRID_ALGORITHMS)
    return HybridSampler(config, target).run()


@trace_function("run_pmc_variant")
def run_pmc_variant(config: SamplerConfig, target: TargetDensity | None = None) -> RunOutput:
    _require(config, PMC_ALGORITHMS)
    return ResamplingPmcSampler(config, target).run()


@trace_function("run_amis")
def run_amis(config: SamplerConfig, target: TargetDensity | None = None) -> RunOutput:
    _require(config, ("amis",))
    return AmisSampler(config, target).run()


@trace_function("run_layered")
def run_layered(config: SamplerConfig, target: TargetDensity | None = None) -> RunOutput:
    _require(config, LAYERED_ALGORITHMS)
    if config.algorithm == "hais":
        return HybridSampler(config, target).run()
    return LayeredMetropolisSampler(config, target).run()


def run_sampler(config: SamplerConfig, target: TargetDensity | None = None) -> RunOutput:
    """Dispatch a run on ``config.algorithm``."""
    if config.algorithm in HYBRID_ALGORITHMS:
        return run_hpmc(config, target)
    if config.algorithm in PMC_ALGORITHMS:
        return run_pmc_variant(config, target)
    if config.algorithm == "amis":
        return run_amis(config, target)
    return run_layered(config, target)
