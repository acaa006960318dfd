"""
Structured logging setup for strata-eit.

All modules obtain their logger with ``structlog.get_logger(__name__)`` and
emit snake_case events with keyword context. ``configure_logging`` is called
once by the CLI; library use without it falls back to structlog defaults.
"""

import logging
import sys

import structlog


def configure_logging(verbose: bool = False, json_logs: bool = False, level: str = "INFO") -> None:
    """
    Install the structlog processor chain.

    Args:
        verbose: Lower the threshold to DEBUG regardless of ``level``
        json_logs: Render JSON lines instead of the console renderer
        level: Minimum level name when not verbose
    """
    threshold = logging.DEBUG if verbose else logging.getLevelName(level.upper())
    if not isinstance(threshold, int):
        threshold = logging.INFO

    renderer = (
        structlog.processors.JSONRenderer()
        if json_logs
        else structlog.dev.ConsoleRenderer(colors=False)
    )

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(threshold),
        context_class=dict,
        # stderr keeps stdout free for command output
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )
