import logging
import sys

from .cli.commands import run_cli
from .config.settings import settings
from .telemetry.tracing import init_tracing

# Configure logging with more detailed format
logging.basicConfig(
    level=settings.log_level.upper(),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s - [%(filename)s:%(lineno)d]",
)
logger = logging.getLogger(__name__)


def main(argv: list[str] | None = None) -> int:
    """Callable entrypoint for the ``hpmc-bench`` console script.

    Returns the process exit code of the dispatched subcommand.
    """
    # Setup OpenTelemetry tracing (gracefully handles failures)
    if init_tracing(settings):
        logger.info("OpenTelemetry tracing initialized successfully")
    return run_cli(argv)


if __name__ == "__main__":
    sys.exit(main())
