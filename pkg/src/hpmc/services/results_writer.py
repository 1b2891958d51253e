"""Result rows and their CSV / JSON files, written through polars."""

import os
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Literal

import polars as pl
from pydantic import BaseModel, ConfigDict

from ..errors import InvalidSpecError, ResultsIOError
from ..telemetry.tracing import trace_function

ResultFormat = Literal["csv", "json"]

RESULT_SCHEMA = {
    "algorithm": pl.String,
    "N": pl.Int64,
    "K": pl.Int64,
    "sigma": pl.Float64,
    "epsilon_or_lambda": pl.Float64,
    "metric": pl.String,
    "value": pl.Float64,
    "stderr": pl.Float64,
    "replicates": pl.Int64,
    "target_evals": pl.Int64,
    "proposal_evals": pl.Int64,
    "seed_base": pl.Int64,
}
RESULT_COLUMNS = list(RESULT_SCHEMA)

SERIES_SCHEMA = {
    "algorithm": pl.String,
    "label": pl.String,
    "N": pl.Int64,
    "K": pl.Int64,
    "dim": pl.Int64,
    "metric": pl.String,
    "value": pl.Float64,
    "stderr": pl.Float64,
    "replicates": pl.Int64,
}


class ResultRow(BaseModel):
    """One aggregated metric of one variant; NaN ``value`` marks a degenerate estimate."""

    model_config = ConfigDict(frozen=True)

    algorithm: str
    N: int
    K: int
    sigma: float
    epsilon_or_lambda: float | None = None
    metric: str
    value: float
    stderr: float
    replicates: int
    # per-run means of the evaluation counters
    target_evals: int
    proposal_evals: int
    seed_base: int

    @property
    def degenerate(self) -> bool:
        return self.value != self.value


class SeriesRow(BaseModel):
    """One point of a per-dimension MSE curve."""

    model_config = ConfigDict(frozen=True)

    algorithm: str
    label: str
    N: int
    K: int
    dim: int
    metric: str
    value: float
    stderr: float
    replicates: int


def results_frame(rows: Sequence[ResultRow]) -> pl.DataFrame:
    return pl.DataFrame([r.model_dump() for r in rows], schema=RESULT_SCHEMA)


def series_frame(rows: Sequence[SeriesRow]) -> pl.DataFrame:
    return pl.DataFrame([r.model_dump() for r in rows], schema=SERIES_SCHEMA)


def ensure_output_dir(path: str | Path) -> Path:
    """Create ``path`` and prove it is writable before any run starts."""
    path = Path(path)
    probe = path / ".hpmc-write-probe"
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise ResultsIOError(f"output directory {path} is not writable: {e}") from e
    return path


def _atomic_write(path: Path, write: Callable[[Path], None]) -> Path:
    """Write through a temporary sibling and rename; the temporary file is removed on failure."""
    tmp = path.with_name(f".{path.name}.partial")
    try:
        write(tmp)
        os.replace(tmp, path)
    except Exception as e:
        tmp.unlink(missing_ok=True)
        raise ResultsIOError(f"failed to write {path}: {e}") from e
    return path


def _write_frame(frame: pl.DataFrame, path: Path, fmt: ResultFormat) -> Path:
    if fmt == "csv":
        return _atomic_write(path, lambda p: frame.write_csv(p, line_terminator="\n"))
    return _atomic_write(path, lambda p: frame.write_json(p))


@trace_function("emit_results")
def emit_results(
    rows: Sequence[ResultRow],
    out_stem: str | Path,
    fmt: ResultFormat = "csv",
    plot_data: bool = False,
    series: Sequence[SeriesRow] | None = None,
) -> list[Path]:
    """Write ``<out_stem>.csv`` (or ``.json``) and, with ``plot_data``, ``<out_stem>_series.csv``.

    Returns the written paths.
    """
    if not rows:
        raise InvalidSpecError("no result rows to write; the metric set selected nothing")
    if fmt not in ("csv", "json"):
        raise InvalidSpecError(f"unknown output format '{fmt}'")
    if plot_data and not series:
        raise InvalidSpecError("plot data requested but no series rows were produced")

    out_stem = Path(out_stem)
    ensure_output_dir(out_stem.parent)
    written = [_write_frame(results_frame(rows), out_stem.with_suffix(f".{fmt}"), fmt)]
    if plot_data:
        series_path = out_stem.with_name(f"{out_stem.name}_series.csv")
        written.append(_write_frame(series_frame(series), series_path, "csv"))
    return written


def read_results(path: str | Path) -> list[ResultRow]:
    """Read a results file written by :func:`emit_results` back into rows."""
    path = Path(path)
    try:
        if path.suffix == ".json":
            frame = pl.read_json(path, schema=RESULT_SCHEMA)
        else:
            frame = pl.read_csv(path, schema=RESULT_SCHEMA)
    except (OSError, pl.exceptions.PolarsError) as e:
        raise ResultsIOError(f"failed to read {path}: {e}") from e
    return [ResultRow(**record) for record in frame.select(RESULT_COLUMNS).iter_rows(named=True)]


def read_series(path: str | Path) -> list[SeriesRow]:
    frame = pl.read_csv(Path(path), schema=SERIES_SCHEMA)
    return [SeriesRow(**record) for record in frame.iter_rows(named=True)]


@trace_function("emit_audit")
def emit_audit(records: Sequence[dict], out_stem: str | Path) -> Path:
    """Write counter-audit records to ``<out_stem>_audit.csv``."""
    if not records:
        raise InvalidSpecError("no audit records to write")
    out_stem = Path(out_stem)
    ensure_output_dir(out_stem.parent)
    path = out_stem.with_name(f"{out_stem.name}_audit.csv")
    return _write_frame(pl.DataFrame(list(records)), path, "csv")
