"""Logging setup driven by the TEXANOM_LOG environment variable."""

import logging
import os
from typing import Optional

LOG_ENV_VAR = "TEXANOM_LOG"
_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
PACKAGE_LOGGER = __name__.rsplit(".utils", 1)[0]


def configure_logging(level: Optional[str] = None) -> int:
    """Attach a single stream handler to the package logger.

    Args:
        level: Level name; falls back to ``TEXANOM_LOG`` and then ``WARNING``.

    Returns:
        The numeric level that was applied.
    """
    name = (level or os.getenv(LOG_ENV_VAR, "WARNING")).upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        numeric = logging.WARNING

    root = logging.getLogger(PACKAGE_LOGGER)
    root.setLevel(numeric)
    if not any(getattr(h, "_texanom", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(_FORMAT))
        handler._texanom = True
        root.addHandler(handler)
    return numeric


def progress_enabled(logger: logging.Logger) -> bool:
    """Whether batch progress bars should be shown for ``logger``."""
    return logger.isEnabledFor(logging.INFO)
