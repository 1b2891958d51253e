"""``hpmc-bench`` subcommands: ``run``, ``audit`` and ``sweep``.

Exit codes: 0 on success, 2 when the spec file (or a flag) is invalid,
3 when results cannot be written, 1 for anything else.
"""

import argparse
import asyncio
import sys
from dataclasses import asdict
from pathlib import Path

from opentelemetry.trace import Status, StatusCode

from ..config.experiment import ExperimentSpec, load_experiment_spec
from ..config.settings import settings
from ..errors import HpmcError
from ..services.experiment_service import ExperimentService
from ..services.results_writer import emit_audit
from ..telemetry.tracing import TracingMixin, trace_function


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hpmc-bench",
        description="Benchmark harness for hybrid population Monte Carlo and baseline samplers.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", required=True, type=Path, help="experiment spec file (INI)")
    common.add_argument("--seed", type=int, help="seed_base; overrides the spec file")
    common.add_argument("--replicates", type=int, help="replicates per variant")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--format", choices=("csv", "json"), help="results file format")
    common.add_argument(
        "--threads",
        type=int,
        help="worker threads for replicates (default: HPMC_THREADS or the physical core count)",
    )

    subparsers.add_parser("run", parents=[common], help="run an experiment spec")
    subparsers.add_parser("audit", parents=[common], help="audit evaluation counters")
    sweep = subparsers.add_parser("sweep", parents=[common], help="banana dimension sweep")
    sweep.add_argument(
        "--plot-data",
        action="store_true",
        default=None,
        help="also write the per-dimension MSE series file",
    )
    return parser


class CommandHandler(TracingMixin):
    """Loads the spec, applies flag overrides and drives the experiment service."""

    def __init__(self, args: argparse.Namespace):
        super().__init__()
        self.args = args
        threads = args.threads if args.threads and args.threads > 0 else None
        self.service = ExperimentService(threads=threads or settings.default_threads())

    def load_spec(self) -> ExperimentSpec:
        a = self.args
        return load_experiment_spec(
            a.spec,
            seed_base=a.seed,
            replicates=a.replicates,
            output_dir=a.out,
            output_format=a.format,
            plot_data=getattr(a, "plot_data", None),
        )

    @trace_function("cli_run")
    def run(self) -> int:
        spec = self.load_spec()
        result = asyncio.run(self.service.run_experiment(spec))
        for row in result.rows:
            print(
                f"{row.algorithm:<14} N={row.N:<4} K={row.K:<3} sigma={row.sigma:<5g} "
                f"{row.metric:<22} {row.value:.6g} +/- {row.stderr:.2g}"
            )
        print(f"results: {', '.join(map(str, result.paths))}")
        return 0

    @trace_function("cli_audit")
    def audit(self) -> int:
        spec = self.load_spec()
        _, report = asyncio.run(self.service.run_audit(spec))
        print(report.format_table())
        records = [
            {**asdict(e), "proposal_ok": e.proposal_ok, "target_ok": e.target_ok}
            for e in report.entries
        ]
        path = emit_audit(records, spec.output_dir / spec.name)
        print(f"audit: {path}")
        return 0

    @trace_function("cli_sweep")
    def sweep(self) -> int:
        spec = self.load_spec()
        result = asyncio.run(self.service.run_sweep(spec))
        print(f"{len(result.rows)} rows, {len(result.series)} series points")
        print(f"results: {', '.join(map(str, result.paths))}")
        return 0

    def dispatch(self) -> int:
        with self.tracer.start_as_current_span("cli_command") as span:
            span.set_attribute("cli.command", self.args.command)
            span.set_attribute("cli.spec", str(self.args.spec))
            try:
                code = getattr(self, self.args.command)()
                span.set_status(Status(StatusCode.OK))
                return code
            except HpmcError as e:
                span.set_status(Status(StatusCode.ERROR, e.detail))
                self.log_and_trace(f"{type(e).__name__}: {e.detail}", "error")
                print(f"error: {e.detail}", file=sys.stderr)
                return e.exit_code


def run_cli(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return CommandHandler(args).dispatch()
