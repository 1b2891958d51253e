"""Exception hierarchy shared by the sampling core, the services and the CLI.

Every error carries the process exit code the CLI returns when it escapes a
subcommand, the same way request handlers map failures onto status codes.
"""


class HpmcError(Exception):
    """Base class for all library errors."""

    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ContractViolationError(HpmcError):
    """A caller broke a shape or domain contract (dimension mismatch, NaN weights)."""


class InvalidInputError(HpmcError):
    """A point handed to a density contains NaN."""


class InvalidSpecError(HpmcError):
    """A target, sampler or experiment specification failed validation."""

    exit_code = 2


class InvalidBudgetError(InvalidSpecError):
    """The evaluation budget does not cover a single iteration."""


class DegenerateEstimateError(HpmcError):
    """Every absorbed weight is zero, so the self-normalised estimate is undefined."""


class ResultsIOError(HpmcError):
    """Result files could not be written."""

    exit_code = 3
