"""
plugins/_host/__init__.py
=========================
Backend host package: logging setup, manifest discovery and plugin loading.

All log output goes to stderr. Stdout is reserved for command output (the
`dka score` summary, for instance) so it can be piped.

Usage:
    from plugins._host import configure_logging
    configure_logging(level="INFO")

    from plugins._host.discovery import BackendDiscovery
    from plugins._host.loader import BackendLoader
"""

import logging
import sys

__version__ = "1.0.0"


# ============================================
# LOGGING CONFIGURATION
# ============================================

DEFAULT_LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

DEFAULT_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# Top-level packages whose loggers share the stderr handler
LOGGER_ROOTS = ("contracts", "plugins", "services")

LOG_LEVELS = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARNING": logging.WARNING,
    "WARN": logging.WARNING,
    "ERROR": logging.ERROR,
    "CRITICAL": logging.CRITICAL,
}


class StderrHandler(logging.StreamHandler):  # type: ignore[type-arg]
    """
    A StreamHandler that always writes to the current sys.stderr.

    Looking the stream up at emit time keeps pytest's capsys and any later
    reassignment of sys.stderr working.
    """

    def __init__(self) -> None:
        super().__init__(stream=sys.stderr)

    def emit(self, record: logging.LogRecord) -> None:
        try:
            self.stream = sys.stderr
            super().emit(record)
            self.flush()
        except Exception:
            self.handleError(record)


def configure_logging(
    level: str = "INFO", log_format: str | None = None, date_format: str | None = None
) -> list[logging.Logger]:
    """
    Configure stderr logging for every package of the project.

    Args:
        level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_format: Custom log format string (defaults to DEFAULT_LOG_FORMAT)
        date_format: Custom date format string (defaults to DEFAULT_DATE_FORMAT)

    Returns:
        The configured package loggers

    Example:
        >>> configure_logging(level="DEBUG")
        >>> logging.getLogger("services.pipeline").info("Starting run...")  # Goes to stderr
    """
    numeric_level = LOG_LEVELS.get(level.upper(), logging.INFO)

    handler = StderrHandler()
    handler.setLevel(numeric_level)
    handler.setFormatter(logging.Formatter(fmt=log_format or DEFAULT_LOG_FORMAT, datefmt=date_format or DEFAULT_DATE_FORMAT))

    loggers = []
    for root in LOGGER_ROOTS:
        package_logger = logging.getLogger(root)
        package_logger.setLevel(numeric_level)
        package_logger.handlers.clear()
        package_logger.addHandler(handler)
        package_logger.propagate = False
        loggers.append(package_logger)

    # httpx logs every request at INFO
    logging.getLogger("httpx").setLevel(max(numeric_level, logging.WARNING))
    return loggers


__all__ = [
    "__version__",
    "configure_logging",
    "StderrHandler",
    "DEFAULT_LOG_FORMAT",
    "DEFAULT_DATE_FORMAT",
    "LOGGER_ROOTS",
    "LOG_LEVELS",
]
