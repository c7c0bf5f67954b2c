"""
Logging setup (loguru sinks)
"""

import os
import sys
from typing import Optional

from loguru import logger

LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} - {name} - {level} - {message}"


def configure_logging(level: Optional[str] = None) -> None:
    """Replace loguru's default sink with a single stderr sink"""
    level = (level or os.getenv("LOG_LEVEL", "INFO")).upper()
    logger.remove()
    logger.add(sys.stderr, level=level, format=LOG_FORMAT)
