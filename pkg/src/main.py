"""
SPINE - command-line entry point.

Logging is configured here once per process; every module logs through
``structlog.get_logger(__name__)``. Log lines go to stderr so stdout only
carries command results.

Run with: python -m src.main --help
"""
import logging
import sys
from typing import Optional

import structlog


def configure_logging(level: str = "INFO", fmt: str = "json") -> None:
    """JSON log lines by default; ``fmt="console"`` for human-readable output."""
    logging.basicConfig(stream=sys.stderr, format="%(message)s", level=level.upper(), force=True)
    renderer = (
        structlog.dev.ConsoleRenderer()
        if fmt == "console"
        else structlog.processors.JSONRenderer()
    )
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.stdlib.BoundLogger,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=False,
    )


def main(argv: Optional[list[str]] = None) -> int:
    from src.cli.app import run

    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
