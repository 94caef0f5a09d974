"""
Debug utilities for the ShapeLinker engine.

Unified debug mode detection and helpers used by the command surface.
"""

import os
import sys
from typing import List, Optional

from utils.logger import is_debug_mode, get_logger

logger = get_logger(__name__)

_TRUTHY = ['true', '1', 'yes', 'on']


def get_debug_mode() -> bool:
    """Current debug mode status from the unified debug system."""
    return is_debug_mode()


def debug_sources() -> List[str]:
    """List the switches that turned debug mode on."""
    sources = []
    if os.getenv('SHAPELINKER_DEBUG', '').lower() in _TRUTHY:
        sources.append("SHAPELINKER_DEBUG environment variable")
    if os.getenv('DEBUG', '').lower() in _TRUTHY:
        sources.append("DEBUG environment variable")
    if '--debug' in sys.argv or '-d' in sys.argv:
        sources.append("command line flag")
    return sources


def log_debug_info() -> None:
    """Log information about how debug mode was activated."""
    if not get_debug_mode():
        return

    sources = debug_sources()
    if sources:
        logger.info(f"🐛 Debug mode active via: {', '.join(sources)}")
    else:
        logger.info("🐛 Debug mode active (source unknown)")


def resolve_thread_count(requested: Optional[int]) -> int:
    """Thread count from the flag, then SHAPELINKER_THREADS, then 1."""
    if requested is not None:
        return max(1, int(requested))
    env_value = os.getenv('SHAPELINKER_THREADS', '').strip()
    if env_value:
        try:
            return max(1, int(env_value))
        except ValueError:
            logger.warning(f"Ignoring non-integer SHAPELINKER_THREADS='{env_value}'")
    return 1
