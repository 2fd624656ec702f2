"""Logging setup for coworld (rich console handler)."""

import logging
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler

_CONFIGURED = False


def setup_logging(level: int = logging.INFO, console: Optional[Console] = None) -> logging.Logger:
    """Attach a RichHandler to the package logger.

    Safe to call more than once; only the level changes on later calls.

    Args:
        level: Logging level for the ``src`` logger tree
        console: Console to render to (defaults to stderr)

    Returns:
        The package root logger
    """
    global _CONFIGURED
    root = logging.getLogger("src")
    root.setLevel(level)

    if not _CONFIGURED:
        handler = RichHandler(
            console=console or Console(stderr=True),
            show_path=False,
            rich_tracebacks=True,
            markup=False,
        )
        handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
        root.addHandler(handler)
        root.propagate = False
        _CONFIGURED = True

    return root
