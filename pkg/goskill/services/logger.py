"""Logging configuration helper."""
from __future__ import annotations

import logging
import sys
from pathlib import Path
from typing import Optional

from loguru import logger

_LOG_FORMAT = "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | {message}"
_FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {message}"

_file_sink: Optional[int] = None


class InterceptHandler(logging.Handler):
    """Forward stdlib records to loguru."""

    def emit(self, record: logging.LogRecord) -> None:  # pragma: no cover - bridge
        try:
            level: str | int = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno
        logger.opt(depth=6, exception=record.exc_info).log(
            level, record.getMessage()
        )


def configure_logging(debug: bool = False, log_file: Optional[Path | str] = None) -> None:
    """Configure the console sink, an optional run-log file and the stdlib bridge."""
    global _file_sink
    logger.remove()
    _file_sink = None
    logger.add(sys.stdout, level="DEBUG" if debug else "INFO", format=_LOG_FORMAT)
    if log_file is not None:
        attach_run_log(log_file, debug=debug)
    logging.basicConfig(handlers=[InterceptHandler()], level=0, force=True)


def attach_run_log(log_file: Path | str, debug: bool = False) -> None:
    """Mirror everything into ``log_file``; replaces a previously attached run log."""
    global _file_sink
    if _file_sink is not None:
        logger.remove(_file_sink)
    path = Path(log_file)
    path.parent.mkdir(parents=True, exist_ok=True)
    _file_sink = logger.add(path, level="DEBUG" if debug else "INFO", format=_FILE_FORMAT)


def detach_run_log() -> None:
    global _file_sink
    if _file_sink is not None:
        logger.remove(_file_sink)
        _file_sink = None


__all__ = ["configure_logging", "attach_run_log", "detach_run_log", "InterceptHandler"]
