"""JSON log lines on stderr, stdlib loggers rendered by structlog.

stdout belongs to command results (reports and error records), so every log
record, including third-party ones, goes to stderr. Records carry whatever the
harness has bound with ``run_context``: the run id and, inside a job, the
condition name.
"""

import logging
import sys
from collections.abc import Iterator
from contextlib import contextmanager

import structlog

# Libraries that log chatter at INFO while rendering the figure.
QUIET_LOGGERS = ("matplotlib", "PIL")

_configured = False


def _renderer() -> structlog.stdlib.ProcessorFormatter:
    return structlog.stdlib.ProcessorFormatter(
        foreign_pre_chain=[structlog.stdlib.ExtraAdder()],
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso", key="ts"),
            structlog.processors.format_exc_info,
            structlog.stdlib.ProcessorFormatter.remove_processors_meta,
            structlog.processors.JSONRenderer(sort_keys=True),
        ],
    )


def configure_logging(level: str = "INFO") -> None:
    """Install the stderr JSON handler on the root logger, once."""
    global _configured
    if _configured:
        return
    structlog.configure(
        processors=[structlog.stdlib.ProcessorFormatter.wrap_for_formatter],
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_renderer())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)
    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)
    _configured = True


def set_level(level: str) -> None:
    configure_logging(level)
    logging.getLogger().setLevel(level)


@contextmanager
def run_context(**ids: str) -> Iterator[None]:
    """Attach ``ids`` to every record logged in this context.

    Context variables do not cross into worker threads, so each harness job
    binds its own.
    """
    with structlog.contextvars.bound_contextvars(**ids):
        yield


def get_logger(name: str | None = None) -> logging.Logger:
    configure_logging()
    return logging.getLogger(name)
