import asyncio
import math

import numpy as np
import pytest

from hpmc.config.experiment import ExperimentSpec, SweepSpec, TargetSpec, VariantSpec
from hpmc.errors import ContractViolationError, InvalidSpecError, ResultsIOError
from hpmc.sampling.hmc import HmcParams
from hpmc.services.experiment_service import (
    ExperimentService,
    compute_mse,
    expected_proposal_evals,
)
from hpmc.services.results_writer import (
    ResultRow,
    SeriesRow,
    _atomic_write,
    emit_audit,
    emit_results,
    read_results,
    read_series,
)

IDENTITY = TargetSpec(name="gaussian", params={"mean": [0.0, 0.0], "sigma": 1.0})
SMALL_STEP = HmcParams(step_size=0.2, n_leapfrog=10)


def _row(metric="mse_mean", value=0.25, **fields):
    base = dict(
        algorithm="hpmc_resample",
        N=100,
        K=5,
        sigma=5.0,
        epsilon_or_lambda=0.5,
        metric=metric,
        value=value,
        stderr=0.01,
        replicates=50,
        target_evals=199_500,
        proposal_evals=14_250_000,
        seed_base=2024,
    )
    return ResultRow(**{**base, **fields})


def _spec(tmp_path, variants, **fields):
    fields.setdefault("target", IDENTITY)
    fields.setdefault("replicates", 1)
    fields.setdefault("budget", 5_000)
    fields.setdefault("metrics", ("mse_mean", "mse_z"))
    return ExperimentSpec(name="bench", variants=variants, output_dir=tmp_path / "out", **fields)


def test_mse_of_exact_estimates_is_zero():
    assert compute_mse([1.0, 1.0, 1.0], 1.0) == (0.0, 0.0)
    assert compute_mse(np.tile([1.6, 1.4], (4, 1)), [1.6, 1.4]) == (0.0, 0.0)


def test_mse_of_zero_estimates():
    mse, stderr = compute_mse(np.zeros(10), 1.0)
    assert mse == 1.0
    assert stderr == 0.0
    # vector errors average over coordinates
    assert compute_mse(np.zeros((3, 2)), [1.0, 3.0])[0] == pytest.approx(5.0)


def test_mse_of_noisy_estimates():
    R = 10_000
    estimates = 1.0 + np.random.default_rng(0).normal(scale=0.1, size=R)
    mse, stderr = compute_mse(estimates, 1.0)
    assert stderr == pytest.approx(0.01 * math.sqrt(2) / math.sqrt(R), rel=0.1)
    assert abs(mse - 0.01) < 4 * stderr


def test_mse_shape_checks():
    with pytest.raises(ContractViolationError):
        compute_mse(np.zeros((3, 2)), [1.0, 2.0, 3.0])
    with pytest.raises(ContractViolationError):
        compute_mse(np.zeros((3, 2)), 1.0)
    with pytest.raises(ContractViolationError):
        compute_mse([], 1.0)


def test_expected_proposal_evals():
    assert expected_proposal_evals("dm_pmc", 100, 5, 400) == 5 * 100 * 100 * 400
    assert expected_proposal_evals("pmc_standard", 100, 1, 2000) == 100 * 2000
    assert expected_proposal_evals("amis", 1, 500, 400) == 500 * 400 * 400


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_results_file_round_trip(tmp_path, fmt):
    rows = [_row(), _row(metric="mse_z", value=0.003, epsilon_or_lambda=None, algorithm="gr_pmc")]
    paths = emit_results(rows, tmp_path / "toy5", fmt)
    assert paths == [tmp_path / f"toy5.{fmt}"]
    assert read_results(paths[0]) == rows


def test_degenerate_value_survives_csv(tmp_path):
    (path,) = emit_results([_row(value=float("nan"))], tmp_path / "degenerate")
    (row,) = read_results(path)
    assert row.degenerate
    assert not _row().degenerate


def test_results_csv_header(tmp_path):
    (path,) = emit_results([_row()], tmp_path / "header")
    header = path.read_text().splitlines()[0]
    assert header == (
        "algorithm,N,K,sigma,epsilon_or_lambda,metric,value,stderr,replicates,"
        "target_evals,proposal_evals,seed_base"
    )


def test_series_file(tmp_path):
    series = [
        SeriesRow(algorithm="gr_pmc", label="gr", N=100, K=5, dim=d, metric="mse_mean",
                  value=0.1 * d, stderr=0.01, replicates=20)
        for d in (2, 5)
    ]
    paths = emit_results([_row()], tmp_path / "sweep", plot_data=True, series=series)
    assert paths[1] == tmp_path / "sweep_series.csv"
    assert read_series(paths[1]) == series


def test_emit_rejects_empty_and_unknown_formats(tmp_path):
    with pytest.raises(InvalidSpecError):
        emit_results([], tmp_path / "empty")
    with pytest.raises(InvalidSpecError):
        emit_results([_row()], tmp_path / "bad", "parquet")
    with pytest.raises(InvalidSpecError):
        emit_results([_row()], tmp_path / "noseries", plot_data=True)


def test_unwritable_output_directory(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    with pytest.raises(ResultsIOError):
        emit_results([_row()], blocker / "results" / "toy5")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["blocker"]


def test_failed_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "toy5.csv"

    def broken(path):
        path.write_text("half a row")
        raise RuntimeError("disk full")

    with pytest.raises(ResultsIOError):
        _atomic_write(target, broken)
    assert list(tmp_path.iterdir()) == []


def test_emit_audit(tmp_path):
    path = emit_audit([{"variant": "dm_pmc", "passed": True}], tmp_path / "counters")
    assert path.name == "counters_audit.csv"
    assert path.read_text().splitlines()[0] == "variant,passed"
    with pytest.raises(InvalidSpecError):
        emit_audit([], tmp_path / "counters")


def test_identity_experiment(tmp_path):
    variant = VariantSpec(
        label="hpmc", algorithm="hpmc_resample", N=10, K=10, sigma=2.0,
        box_low=0.0, box_high=0.0, hmc=SMALL_STEP,
    )
    spec = _spec(tmp_path, (variant,))
    result = asyncio.run(ExperimentService(threads=2).run_experiment(spec))

    (runs,) = result.runs
    assert runs.T == 5_000 // (10 * 10 + 2 * 10)
    by_metric = {row.metric: row for row in result.rows}
    assert set(by_metric) == {"mse_mean", "mse_z", "mse_z_sum_denominator"}
    assert by_metric["mse_z"].value < 1e-2
    assert by_metric["mse_z"].epsilon_or_lambda == 0.2
    # the plain-sum convention divides Z by N
    assert by_metric["mse_z_sum_denominator"].value == pytest.approx(
        (runs.outputs[0].z / 10 - 1.0) ** 2
    )
    assert result.paths == [tmp_path / "out" / "bench.csv"]
    assert read_results(result.paths[0]) == result.rows


def test_replicates_are_independent_of_thread_count(tmp_path):
    variant = VariantSpec(label="dm", algorithm="dm_pmc", N=5, K=2, sigma=2.0)
    spec = _spec(tmp_path, (variant,), replicates=3, budget=200)
    one = asyncio.run(ExperimentService(threads=1).run_experiment(spec, write=False))
    many = asyncio.run(ExperimentService(threads=3).run_experiment(spec, write=False))
    assert one.rows == many.rows
    estimates = [o.mean_estimate for o in one.runs[0].outputs]
    assert not np.array_equal(estimates[0], estimates[1])


def test_mode_discovery_metric(tmp_path):
    variant = VariantSpec(label="gr", algorithm="gr_pmc", N=20, K=2, sigma=5.0)
    spec = _spec(
        tmp_path, (variant,), target=TargetSpec(name="toy5"), replicates=2, budget=200,
        metrics=("mode_discovery",),
    )
    result = asyncio.run(ExperimentService(threads=1).run_experiment(spec, write=False))
    (row,) = result.rows
    assert row.metric == "mode_discovery"
    assert 0.0 <= row.value <= 1.0


def test_mode_discovery_skipped_for_non_mixture(tmp_path):
    variant = VariantSpec(label="gr", algorithm="gr_pmc", N=5, K=2)
    spec = _spec(tmp_path, (variant,), budget=100, metrics=("mode_discovery", "mse_mean"))
    result = asyncio.run(ExperimentService(threads=1).run_experiment(spec, write=False))
    assert [row.metric for row in result.rows] == ["mse_mean"]


def test_audit_passes_for_every_sampler(tmp_path):
    gaussian = TargetSpec(name="gaussian", params={"mean": [1.0, -1.0]})
    variants = tuple(
        VariantSpec(label=a, algorithm=a, N=6, K=3, sigma=2.0, hmc=SMALL_STEP)
        for a in ("pmc_standard", "dm_pmc", "lr_pmc", "gr_pmc", "amis", "pi_mais", "hais",
                  "hpmc_resample", "hpmc_mixture")
    )
    spec = _spec(tmp_path, variants, target=gaussian, replicates=2, budget=600)
    _, report = asyncio.run(ExperimentService(threads=2).run_audit(spec))
    assert report.passed, report.format_table()
    assert len(report.entries) == 2 * len(variants)
    table = report.format_table()
    assert "FAIL" not in table
    assert "PASS (cached)" in table
    cached = {e.label for e in report.entries if e.residual}
    assert cached == {"hpmc_resample", "hpmc_mixture"}


def test_sweep_writes_a_series_point_per_variant_and_dimension(tmp_path):
    variants = (
        VariantSpec(label="gr", algorithm="gr_pmc", K=2, sigma=2.0),
        VariantSpec(label="lr", algorithm="lr_pmc", K=2, sigma=2.0),
    )
    spec = _spec(
        tmp_path, variants, target=TargetSpec(name="gaussian"), replicates=2, budget=200,
        metrics=("mse_mean",), plot_data=True, sweep=SweepSpec(dims=(2, 3), proposal_counts=(4,)),
    )
    result = asyncio.run(ExperimentService(threads=2).run_sweep(spec))
    assert sorted((s.label, s.dim) for s in result.series) == [
        ("gr", 2), ("gr", 3), ("lr", 2), ("lr", 3)
    ]
    assert {row.metric for row in result.rows} == {"mse_mean_d2", "mse_mean_d3"}
    assert all(row.N == 4 for row in result.rows)
    assert [p.name for p in result.paths] == ["bench.csv", "bench_series.csv"]
    assert len(read_series(result.paths[1])) == 4


def test_sweep_requires_a_grid(tmp_path):
    spec = _spec(tmp_path, (VariantSpec(label="gr", algorithm="gr_pmc"),))
    with pytest.raises(InvalidSpecError):
        asyncio.run(ExperimentService(threads=1).run_sweep(spec))
