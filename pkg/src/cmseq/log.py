import logging
import sys

import colorama
from colorama import Fore, Style

from cmseq.exceptions import CmseqError, ModelFormatError


class LogFormatter(logging.Formatter):
    """Colours records by level: `(time) [file:line]: message`, cmseq records in square brackets."""

    __slots__ = ('formatters',)

    colors = {
        logging.DEBUG: Fore.CYAN,
        logging.INFO: Fore.GREEN,
        logging.WARNING: Fore.YELLOW,
        logging.ERROR: Fore.RED,
        logging.CRITICAL: Style.BRIGHT + Fore.RED,
    }

    time_fmt = "%Y-%m-%d %H:%M:%S"

    def __init__(self):
        super().__init__()
        self.formatters = {
            level: logging.Formatter(f"(%(asctime)s) {color}%(location)s: %(message)s{Style.RESET_ALL}",
                                     self.time_fmt)
            for level, color in self.colors.items()
        }

    def format(self, record: logging.LogRecord) -> str:
        where = f"{record.filename}:{record.lineno}"
        record.location = f"[{where}]" if record.name.startswith(__package__) else f"({where})"
        formatter = self.formatters.get(record.levelno, self.formatters[logging.ERROR])
        return formatter.format(record)


def setup_logger() -> None:
    """Enables the coloured logger globally. Log output goes to stderr so that
    reports written to stdout stay machine readable."""
    colorama.init()

    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(LogFormatter())

    logging.basicConfig(level=logging.INFO, handlers=[handler], force=True)

    sys.excepthook = handle_exception


def report_error(exception: BaseException) -> int:
    """Logs a library error and returns the process exit status it maps to.

    Args:
        exception: the raised error

    Returns:
        int: 1 for validation failures, 2 for numerical failures
    """
    logger = logging.getLogger(__package__)

    if isinstance(exception, ModelFormatError):
        location = f'"{exception.file}"' if exception.file else "<input>"
        if exception.line is not None:
            location += f", line {exception.line}, column {exception.column}"
        logger.error("  File: %s", location)
        if exception.field:
            logger.error("  Field: %s", exception.field)

    if logger.isEnabledFor(logging.DEBUG):
        logger.exception("%s: %s", type(exception).__name__, exception, exc_info=exception)
    else:
        logger.error("%s: %s", type(exception).__name__, exception)

    return exception.exit_code if isinstance(exception, CmseqError) else 1


def handle_exception(type_, exception, trace):
    """Global exception handler.
    Prints uncaught exceptions with the custom formatter.

    Args:
        type_: Exception type
        exception: Exception value
        trace: Exception trace
    """
    if not issubclass(type_, CmseqError):
        logger = logging.getLogger(__package__)
        if logger.isEnabledFor(logging.DEBUG):
            logger.exception("Exception occurred: ", exc_info=(type_, exception, trace))
        else:
            logger.error("Exception occurred: %s %s", type_.__name__, exception)
        raise SystemExit(1)

    raise SystemExit(report_error(exception))
