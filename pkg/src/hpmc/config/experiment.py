"""Sampler and experiment configuration models and the INI spec-file loader.

Spec files are flat key-value INI text::

    [experiment]
    name = bimodal20
    replicates = 50
    budget = 200000
    metrics = mse_mean, mse_z

    [target]
    name = bimodal20
    dim = 20

    [variant.hpmc_resample_s5]
    algorithm = hpmc_resample
    N = 250
    K = 2
    sigma = 5
    step_size = 5
    n_leapfrog = 50

Every key is documented in ``docs/spec-file-format.md``.
"""

import configparser
import json
from pathlib import Path
from typing import Any, Literal, get_args

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from ..errors import InvalidSpecError
from ..sampling.adaptation import IncumbentPairing
from ..sampling.hmc import HmcParams
from ..sampling.targets import BENCHMARK_TARGETS, TargetDensity, build_benchmark_target
from .settings import settings

Algorithm = Literal[
    "hpmc_resample",
    "hpmc_mixture",
    "pmc_standard",
    "dm_pmc",
    "lr_pmc",
    "gr_pmc",
    "amis",
    "pi_mais",
    "hais",
]
ALGORITHMS: tuple[str, ...] = get_args(Algorithm)
HYBRID_ALGORITHMS = ("hpmc_resample", "hpmc_mixture")
PMC_ALGORITHMS = ("pmc_standard", "dm_pmc", "lr_pmc", "gr_pmc")
LAYERED_ALGORITHMS = ("pi_mais", "hais")

Metric = Literal["mse_mean", "mse_z", "mode_discovery"]
OutputFormat = Literal["csv", "json"]


class TargetSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "toy5"
    params: dict[str, Any] = Field(default_factory=dict)

    @field_validator("name")
    @classmethod
    def _known_target(cls, value: str) -> str:
        if value not in BENCHMARK_TARGETS:
            raise ValueError(
                f"unknown target '{value}'; expected one of {', '.join(BENCHMARK_TARGETS)}"
            )
        return value

    def build(self) -> TargetDensity:
        return build_benchmark_target(self.name, self.params)


class SamplerSettings(BaseModel):
    """Algorithm parameters shared by a run configuration and a spec-file variant."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    algorithm: Algorithm
    N: int = Field(default=100, ge=1)
    K: int = Field(default=5, ge=1)
    sigma: float = Field(default=5.0, gt=0)
    hmc: HmcParams = Field(default_factory=HmcParams)
    mh_scale: float = Field(default=5.0, gt=0)

    # cold-start square the initial locations are drawn from
    box_low: float = -4.0
    box_high: float = 4.0

    burn_in_iterations: int = Field(default=0, ge=0)
    use_local_resampling: bool = True
    use_cooperation: bool = True
    incumbent_pairing: IncumbentPairing = "q_set"
    mode_check_iteration: int = Field(default=3, ge=1)
    keep_snapshots: bool = True
    archive_samples: bool = False

    @model_validator(mode="after")
    def _check_box(self):
        if self.box_low > self.box_high:
            raise ValueError(
                f"box_low ({self.box_low}) must not exceed box_high ({self.box_high})"
            )
        return self

    @property
    def epsilon_or_lambda(self) -> float | None:
        """The step parameter reported next to results: HMC step size or MH scale."""
        if self.algorithm in HYBRID_ALGORITHMS or self.algorithm == "hais":
            return self.hmc.step_size
        if self.algorithm == "pi_mais":
            return self.mh_scale
        return None

    @property
    def samples_per_iteration(self) -> int:
        return self.N if self.algorithm == "pmc_standard" else self.N * self.K


class SamplerConfig(SamplerSettings):
    """Everything one seeded run needs."""

    target: TargetSpec = Field(default_factory=TargetSpec)
    T: int = Field(default=10, ge=1)
    seed: int = Field(default_factory=lambda: settings.default_seed)
    replicate: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_burn_in(self):
        if self.burn_in_iterations >= self.T:
            raise ValueError(
                f"burn_in_iterations ({self.burn_in_iterations}) must be below T ({self.T})"
            )
        return self

    def rng(self) -> np.random.Generator:
        """Counter-derived sub-stream ``replicate`` of ``seed``."""
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.replicate,))
        return np.random.Generator(np.random.PCG64(seq))


class VariantSpec(SamplerSettings):
    label: str


class SweepSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    dims: tuple[int, ...] = (2, 5, 10, 15, 20, 30, 40, 50)
    proposal_counts: tuple[int, ...] = (100, 200)

    @field_validator("dims", "proposal_counts")
    @classmethod
    def _positive(cls, values: tuple[int, ...]) -> tuple[int, ...]:
        if not values or min(values) < 1:
            raise ValueError("sweep grids must be non-empty and positive")
        return values


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "experiment"
    target: TargetSpec = Field(default_factory=TargetSpec)
    variants: tuple[VariantSpec, ...]
    replicates: int = Field(default_factory=lambda: settings.default_replicates, ge=1)
    budget: int = Field(default_factory=lambda: settings.default_budget, ge=1)
    metrics: tuple[Metric, ...] = ("mse_mean", "mse_z")
    seed_base: int = Field(default_factory=lambda: settings.default_seed)
    output_dir: Path = Field(default_factory=lambda: Path(settings.output_dir))
    output_format: OutputFormat = "csv"
    plot_data: bool = False
    sweep: SweepSpec | None = None

    @model_validator(mode="after")
    def _check_variants(self):
        if not self.variants:
            raise ValueError("an experiment needs at least one variant")
        if not self.metrics:
            raise ValueError("the metric set is empty")
        labels = [v.label for v in self.variants]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate variant labels in {labels}")
        return self

    def run_config(
        self,
        variant: VariantSpec,
        T: int,
        replicate: int,
        target: TargetSpec | None = None,
        N: int | None = None,
    ) -> SamplerConfig:
        """The SamplerConfig of one replicate of ``variant``."""
        fields = variant.model_dump(exclude={"label"})
        if N is not None:
            fields["N"] = N
        try:
            return SamplerConfig(
                **fields,
                target=target or self.target,
                T=T,
                seed=self.seed_base,
                replicate=replicate,
            )
        except ValidationError as e:
            raise InvalidSpecError(f"invalid run of variant '{variant.label}': {e}") from e


# spec-file keys that feed HmcParams instead of SamplerSettings
_HMC_KEYS = {"step_size", "n_leapfrog"}


def _parse_value(raw: str) -> Any:
    """INI values are JSON where they parse as JSON, plain strings otherwise."""
    text = raw.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    return text


def _parse_list(raw: str) -> list[Any]:
    text = raw.strip()
    if text.startswith("["):
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise InvalidSpecError(f"malformed list value {text!r}: {e}") from e
    return [_parse_value(part) for part in text.split(",") if part.strip()]


def _variant_from_section(label: str, section: configparser.SectionProxy) -> dict:
    fields: dict[str, Any] = {"label": label}
    hmc: dict[str, Any] = {}
    for key, raw in section.items():
        if key in _HMC_KEYS:
            hmc[key] = _parse_value(raw)
        else:
            fields[key] = _parse_value(raw)
    if hmc:
        fields["hmc"] = hmc
    return fields


def _read_parser(path: Path) -> configparser.ConfigParser:
    # keys are case-sensitive (N, K, T)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as e:
        raise InvalidSpecError(f"cannot read spec file {path}: {e}") from e
    except configparser.Error as e:
        raise InvalidSpecError(f"malformed spec file {path}: {e}") from e
    return parser


def parse_experiment_spec(parser: configparser.ConfigParser, **overrides) -> ExperimentSpec:
    known = {"experiment", "target", "sweep"}
    unknown = [
        s for s in parser.sections() if s not in known and not s.startswith("variant.")
    ]
    if unknown:
        raise InvalidSpecError(f"unknown spec-file sections: {', '.join(unknown)}")

    fields: dict[str, Any] = {}
    if parser.has_section("experiment"):
        for key, raw in parser["experiment"].items():
            fields[key] = _parse_list(raw) if key == "metrics" else _parse_value(raw)

    if parser.has_section("target"):
        target = {k: _parse_value(v) for k, v in parser["target"].items()}
        name = target.pop("name", "toy5")
        fields["target"] = {"name": name, "params": target}

    if parser.has_section("sweep"):
        fields["sweep"] = {k: _parse_list(v) for k, v in parser["sweep"].items()}

    fields["variants"] = [
        _variant_from_section(section.removeprefix("variant."), parser[section])
        for section in parser.sections()
        if section.startswith("variant.")
    ]

    fields.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentSpec(**fields)
    except ValidationError as e:
        raise InvalidSpecError(f"invalid experiment spec: {e}") from e


def load_experiment_spec(path: str | Path, **overrides) -> ExperimentSpec:
    """Read an INI spec file; keyword overrides (CLI flags) win over file values."""
    return parse_experiment_spec(_read_parser(Path(path)), **overrides)


def build_sampler_config(**fields) -> SamplerConfig:
    """SamplerConfig constructor that reports validation failures as InvalidSpecError."""
    try:
        return SamplerConfig(**fields)
    except ValidationError as e:
        raise InvalidSpecError(f"invalid sampler config: {e}") from e
