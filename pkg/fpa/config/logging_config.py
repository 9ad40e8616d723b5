"""
Logging Configuration - Console logging for the CLI and scripts
"""

import logging
import sys

BANNER = "=" * 80

_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def setup_logging(level: str = "INFO") -> None:
    """Configure the root logger once; later calls only change the level."""
    root = logging.getLogger()
    root.setLevel(level.upper())
    if any(getattr(h, "_fpa_handler", False) for h in root.handlers):
        return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(_FORMAT, datefmt="%H:%M:%S"))
    handler._fpa_handler = True
    root.addHandler(handler)


def log_banner(logger: logging.Logger, title: str) -> None:
    logger.info(BANNER)
    logger.info(title.upper())
    logger.info(BANNER)
