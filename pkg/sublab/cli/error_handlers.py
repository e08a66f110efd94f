"""Errors -> exit codes and JSON error records: the single place they are mapped."""

import json
import sys
from typing import Any, TextIO

from sublab.exceptions import RunError, SublabError
from sublab.log import get_logger

log = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def error_record(exc: BaseException) -> dict[str, Any]:
    if not isinstance(exc, SublabError):
        # Never leak internals; the traceback goes to the log.
        return {"error": "InternalError", "detail": "Unexpected failure, see log"}
    record: dict[str, Any] = {"error": type(exc).__name__, "detail": exc.detail}
    if isinstance(exc, RunError) and exc.diagnostics:
        record["diagnostics"] = exc.diagnostics
    return record


def handle_error(exc: BaseException, stream: TextIO | None = None) -> int:
    """Write the error record to stderr and return the exit code."""
    if not isinstance(exc, SublabError):
        log.error("unhandled error", exc_info=exc)
    print(json.dumps(error_record(exc), sort_keys=True, default=str), file=stream or sys.stderr)
    return EXIT_FAILURE
