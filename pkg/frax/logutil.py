"""Logging setup for the ``frax`` logger tree."""

from __future__ import annotations

import logging

logger = logging.getLogger("frax")

LEVELS = {
    "debug": logging.DEBUG,
    "info": logging.INFO,
    "warning": logging.WARNING,
    "error": logging.ERROR,
    "critical": logging.CRITICAL,
}


def setup_logging(level: int = logging.INFO) -> None:
    # one handler per process
    if not any(getattr(h, "_frax", False) for h in logger.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
        handler._frax = True  # type: ignore[attr-defined]
        logger.addHandler(handler)
    logger.setLevel(level)


def set_verbosity(level: str = "info") -> None:
    logger.setLevel(LEVELS.get(level.lower(), logging.INFO))
