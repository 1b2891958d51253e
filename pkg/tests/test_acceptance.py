"""Long replicate runs on the benchmark targets. Deselected by default; run with ``-m slow``."""

import asyncio
import math

import numpy as np
import pytest

from hpmc.config.experiment import ExperimentSpec, SamplerConfig, TargetSpec, VariantSpec
from hpmc.sampling.hmc import HmcParams
from hpmc.services.experiment_service import ExperimentService
from hpmc.services.results_writer import ResultRow
from hpmc.services.sampler_service import run_sampler

pytestmark = pytest.mark.slow

BIMODAL20 = TargetSpec(name="bimodal20", params={"dim": 20, "separation": 8, "c": 5})
# the variance-5 modes need step_size < 2 sqrt(5) for the leapfrog to stay stable
WIDE_MODE_HMC = HmcParams(step_size=1.0, n_leapfrog=50)


def _discovery_rate(algorithm: str, runs: int = 50, **fields) -> float:
    found = []
    for r in range(runs):
        config = SamplerConfig(
            algorithm=algorithm, N=100, K=5, sigma=5.0, T=3, target=TargetSpec(name="toy5"),
            replicate=r, keep_snapshots=False, **fields,
        )
        found.append(run_sampler(config).diagnostics.modes_discovered_by(3))
    return float(np.mean(found))


def test_hpmc_discovers_every_toy5_mode():
    assert _discovery_rate("hpmc_resample", hmc=HmcParams(step_size=0.5, n_leapfrog=50)) >= 0.9


def test_global_resampling_misses_toy5_modes():
    assert _discovery_rate("gr_pmc") <= 0.5


def _rows_by_label(spec: ExperimentSpec) -> dict[str, dict[str, ResultRow]]:
    service = ExperimentService()
    result = asyncio.run(service.run_experiment(spec, write=False))
    target = spec.target.build()
    return {
        runs.variant.label: {row.metric: row for row in service.summarize(runs, target, spec)}
        for runs in result.runs
    }


def test_bimodal20_ranking():
    spec = ExperimentSpec(
        name="bimodal20",
        target=BIMODAL20,
        replicates=50,
        budget=200_000,
        variants=(
            VariantSpec(label="hpmc", algorithm="hpmc_resample", N=250, K=2, sigma=5.0, hmc=WIDE_MODE_HMC),
            VariantSpec(label="hais", algorithm="hais", N=250, K=2, sigma=5.0, hmc=WIDE_MODE_HMC),
            VariantSpec(label="gr", algorithm="gr_pmc", N=250, K=2, sigma=5.0),
        ),
    )
    table = _rows_by_label(spec)
    hpmc, hais, gr = (table[label]["mse_mean"] for label in ("hpmc", "hais", "gr"))
    assert hpmc.value < 20
    assert gr.value > 30
    assert hais.value < gr.value
    assert hpmc.value <= hais.value + 2 * math.hypot(hpmc.stderr, hais.stderr)


def test_bimodal_evidence_in_two_dimensions():
    target = TargetSpec(name="bimodal20", params={"dim": 2, "separation": 8, "c": 5})
    spec = ExperimentSpec(
        name="bimodal2",
        target=target,
        replicates=10,
        budget=200_000,
        metrics=("mse_mean", "mse_z"),
        variants=(
            VariantSpec(label="hpmc", algorithm="hpmc_resample", N=250, K=2, sigma=5.0, hmc=WIDE_MODE_HMC),
        ),
    )
    rows = _rows_by_label(spec)["hpmc"]
    assert rows["mse_z"].value < 0.01
    assert rows["mse_mean"].value < 1.0


@pytest.mark.parametrize("dim", [2, 10, 20, 50])
def test_banana_mse_falls_with_more_proposals(dim):
    target = TargetSpec(name="banana", params={"b": 3, "sigma": 1, "dim": dim})
    hmc = HmcParams(step_size=0.2, n_leapfrog=50)
    spec = ExperimentSpec(
        name=f"banana_d{dim}",
        target=target,
        replicates=20,
        budget=200_000,
        metrics=("mse_mean",),
        variants=tuple(
            VariantSpec(label=f"N{n}", algorithm="hpmc_resample", N=n, K=5, sigma=1.0, hmc=hmc)
            for n in (100, 200)
        ),
    )
    result = asyncio.run(ExperimentService().run_experiment(spec, write=False))
    small, large = (
        next(row for row in result.rows if row.N == n) for n in (100, 200)
    )
    slack = 2 * math.hypot(small.stderr, large.stderr)
    assert large.value <= small.value + slack
