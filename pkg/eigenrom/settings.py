"""
Environment-driven defaults.

Values are read once at import; a local .env file is honoured.
"""

import logging
import os

from dotenv import load_dotenv

load_dotenv()

# ──────────────────── Process defaults ──────────────────── #

LOG_LEVEL = os.getenv("EIGENROM_LOG_LEVEL", "INFO").upper()
MODEL_PATH = os.getenv("EIGENROM_MODEL_PATH")
DENSE_LIMIT = int(os.getenv("EIGENROM_DENSE_LIMIT", "12000"))
SPARSE_THRESHOLD = int(os.getenv("EIGENROM_SPARSE_THRESHOLD", "2500"))

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def default_jobs() -> int:
    """Worker cap used when --jobs is not given."""
    raw = os.getenv("EIGENROM_JOBS")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        logging.getLogger(__name__).warning("Ignoring non-integer EIGENROM_JOBS=%r", raw)
        return 1


def configure_logging(level: str = None):
    """Root logger setup for the entry points."""
    logging.basicConfig(level=getattr(logging, level or LOG_LEVEL, logging.INFO),
                        format=LOG_FORMAT)
