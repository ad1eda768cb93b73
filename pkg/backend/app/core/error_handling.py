"""
Error handling for the command-line entry point.

Known pipeline errors become a single JSON line on stderr and exit status 2;
anything unexpected is logged with its traceback and exits with status 1.
"""
import json
import sys
import traceback
from contextlib import contextmanager
from typing import Callable, Iterator, TextIO

import structlog

from app.core.exceptions import LSEMError, StorageError

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_PIPELINE_ERROR = 2


def format_error(exc: LSEMError, command: str) -> str:
    return json.dumps(
        {"error": {"code": exc.error_code, "message": exc.detail, "command": command}},
        sort_keys=True,
    )


def handle_exception(exc: BaseException, command: str, stream: TextIO = None) -> int:
    """Report an exception raised by a subcommand and return the exit status."""
    stream = stream or sys.stderr
    if isinstance(exc, LSEMError):
        logger.warning("command_failed", command=command, error_code=exc.error_code, detail=exc.detail)
        print(format_error(exc, command), file=stream)
        return EXIT_PIPELINE_ERROR

    logger.error(
        "command_crashed",
        command=command,
        error_type=type(exc).__name__,
        error_message=str(exc),
        traceback=traceback.format_exc(),
    )
    print(
        json.dumps(
            {"error": {"code": "INTERNAL_ERROR", "message": f"{type(exc).__name__}: {exc}", "command": command}},
            sort_keys=True,
        ),
        file=stream,
    )
    return EXIT_UNEXPECTED


def run_guarded(command: str, func: Callable[[], None], stream: TextIO = None) -> int:
    try:
        func()
    except KeyboardInterrupt:
        raise
    except Exception as exc:
        return handle_exception(exc, command, stream)
    return EXIT_OK


@contextmanager
def reraise_os_errors(path: str) -> Iterator[None]:
    """Translate OS-level I/O failures into ``StorageError``."""
    try:
        yield
    except OSError as e:
        raise StorageError(str(e), path=str(path)) from e
