"""
Structured logging configuration using structlog.
"""
import logging
import sys
from typing import Any, Optional

import structlog
from structlog.types import EventDict

from app.core.config import settings


def add_service_info(logger: Any, method_name: str, event_dict: EventDict) -> EventDict:
    """Add service information to log events."""
    event_dict["service"] = "pors-rules"
    event_dict["environment"] = settings.ENVIRONMENT
    return event_dict


def round_floats(logger: Any, method_name: str, event_dict: EventDict) -> EventDict:
    """Keep objective values readable in log lines."""
    for key, value in list(event_dict.items()):
        if isinstance(value, float):
            event_dict[key] = round(value, 6)
    return event_dict


def setup_logging(level: Optional[str] = None) -> None:
    """Configure structured logging for the application."""

    log_level = getattr(logging, (level or settings.LOG_LEVEL).upper(), logging.INFO)

    processors = [
        structlog.contextvars.merge_contextvars,
        add_service_info,
        round_floats,
        structlog.stdlib.add_log_level,
        structlog.stdlib.add_logger_name,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
    ]

    if settings.is_development and settings.LOG_FORMAT == "console":
        # Pretty console output for development
        processors.append(structlog.dev.ConsoleRenderer())
    else:
        processors.append(structlog.processors.JSONRenderer())

    structlog.configure(
        processors=processors,
        wrapper_class=structlog.stdlib.BoundLogger,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )

    # stdout carries primary outputs, so logs go to stderr
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=log_level,
        force=True,
    )



def bind_run_context(**values: Any) -> None:
    """Attach command-level context (command, seed, threads) to every later log line."""
    structlog.contextvars.clear_contextvars()
    structlog.contextvars.bind_contextvars(**values)
