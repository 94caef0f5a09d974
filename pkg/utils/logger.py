"""
Logging system for the ShapeLinker engine.

Named loggers with emoji prefixes, optional colour and a single global
verbosity switch. Output goes to stderr so command results on stdout stay
machine readable; training loops report one INFO line per epoch and keep
per-sample detail at DEBUG.
"""

import os
import sys
from datetime import datetime
from enum import Enum
from typing import Dict, Optional, TextIO


class LogLevel(Enum):
    """Log levels in order of severity."""
    DEBUG = 10
    INFO = 20
    WARNING = 30
    ERROR = 40


COLORS = {
    LogLevel.DEBUG: '\033[36m',    # Cyan
    LogLevel.INFO: '\033[32m',     # Green
    LogLevel.WARNING: '\033[33m',  # Yellow
    LogLevel.ERROR: '\033[31m',    # Red
}
RESET, BOLD, DIM = '\033[0m', '\033[1m', '\033[2m'

EMOJIS = {
    LogLevel.DEBUG: '🔧',
    LogLevel.INFO: '✅',
    LogLevel.WARNING: '⚠️',
    LogLevel.ERROR: '❌',
}


def _stream_supports_color(stream: TextIO) -> bool:
    if not hasattr(stream, 'isatty') or not stream.isatty():
        return False
    term = os.getenv('TERM', '').lower()
    colorterm = os.getenv('COLORTERM', '').lower()
    return any(tag in term for tag in ('color', 'xterm', 'screen')) or colorterm in ('truecolor', '24bit')


class Logger:
    """Named logger writing `[HH:MM:SS] emoji [name] message` lines."""

    def __init__(self, name: str, level: LogLevel = LogLevel.INFO):
        self.name = name
        self.level = level

    def _format_message(self, level: LogLevel, message: str, color: bool) -> str:
        emoji = EMOJIS.get(level, '•')
        timestamp = datetime.now().strftime("%H:%M:%S")
        if color:
            return (f"{DIM}[{timestamp}]{RESET} {emoji} {BOLD}[{self.name}]{RESET} "
                    f"{COLORS[level]}{message}{RESET}")
        return f"[{timestamp}] {emoji} [{self.name}] {message}"

    def _log(self, level: LogLevel, message: str) -> None:
        if level.value < self.level.value:
            return
        # looked up per call so pytest's capture and redirected stderr both work
        stream = LogManager.stream or sys.stderr
        print(self._format_message(level, message, _stream_supports_color(stream)), file=stream)

    def debug(self, message: str) -> None:
        """Per-sample and per-file detail; shown only in debug mode."""
        self._log(LogLevel.DEBUG, message)

    def info(self, message: str) -> None:
        self._log(LogLevel.INFO, message)

    def warning(self, message: str) -> None:
        self._log(LogLevel.WARNING, message)

    def error(self, message: str) -> None:
        self._log(LogLevel.ERROR, message)

    def set_level(self, level: LogLevel) -> None:
        self.level = level


class LogManager:
    """Registry of named loggers sharing one global level."""

    global_level: LogLevel = LogLevel.INFO
    stream: Optional[TextIO] = None
    _loggers: Dict[str, Logger] = {}

    @classmethod
    def set_global_level(cls, level: LogLevel) -> None:
        cls.global_level = level
        for logger in cls._loggers.values():
            logger.set_level(level)

    @classmethod
    def get_logger(cls, name: str) -> Logger:
        if name not in cls._loggers:
            cls._loggers[name] = Logger(name, cls.global_level)
        return cls._loggers[name]


def get_logger(name: str) -> Logger:
    """Get or create the logger for `name` (usually `__name__`)."""
    return LogManager.get_logger(name)


def set_debug_mode(enabled: bool = True) -> None:
    """Enable or disable debug mode globally."""
    LogManager.set_global_level(LogLevel.DEBUG if enabled else LogLevel.INFO)


def set_quiet_mode() -> None:
    """Only warnings and errors; the test suite runs this way."""
    LogManager.set_global_level(LogLevel.WARNING)


def is_debug_mode() -> bool:
    return LogManager.global_level == LogLevel.DEBUG


def _env_flag(name: str) -> bool:
    return os.getenv(name, '').lower() in ('true', '1', 'yes', 'on')


def configure_logging_from_environment() -> None:
    """Switch on debug mode from SHAPELINKER_DEBUG, DEBUG or a --debug/-d argument."""
    sources = [
        ("command line flag", '--debug' in sys.argv or '-d' in sys.argv),
        ("SHAPELINKER_DEBUG environment variable", _env_flag('SHAPELINKER_DEBUG')),
        ("DEBUG environment variable", _env_flag('DEBUG')),
    ]
    source = next((label for label, active in sources if active), None)
    set_debug_mode(source is not None)
    if source is not None:
        logger = get_logger("LogManager")
        logger.info("🐛 Debug mode enabled")
        logger.debug(f"Debug enabled via {source}")


# Initialize logging based on environment on import
configure_logging_from_environment()
