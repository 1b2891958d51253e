"""Hybrid population Monte Carlo and baseline adaptive importance samplers.

Expose a callable `main()` so the console entrypoint that does
`from src.hpmc import main` gets a function (not a module) and can call it.
"""

from importlib import import_module


def main(*args, **kwargs):
    """Run the benchmark CLI (delegates to `hpmc.main.main`)."""
    # Lazy-import the main module so importing the library does not configure logging
    return import_module(".main", package=__name__).main(*args, **kwargs)
