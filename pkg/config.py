"""Runtime settings loading utilities."""

from dataclasses import dataclass
import logging
import os
from typing import Optional

from dotenv import load_dotenv

# Load .env file into environment variables
load_dotenv()

logger = logging.getLogger(__name__)

# --- Environment variables ---
# `OSMOFILT_THREADS` mirrors the `--threads` flag of the command line.
THREADS_ENV_VAR = "OSMOFILT_THREADS"
LOG_FILE_ENV_VAR = "OSMOFILT_LOG_FILE"
LOG_LEVEL_ENV_VAR = "OSMOFILT_LOG_LEVEL"

# --- Numeric defaults ---
DEFAULT_STOP_TOL = 1e-8
INTEGER_LIFT = 1.0  # 8/16-bit inputs: zeros become 1
FLOAT_LIFT_FRACTION = 1e-6  # float inputs: lift is 1e-6 * max
DENSE_ORACLE_MAX_PIXELS = 64 * 64
DEFAULT_BENCH_SIGMA = 8.0
DEFAULT_BENCH_TAUS = (1.0, 10.0, 50.0, 100.0, 200.0, 500.0, 1000.0)
DEFAULT_BENCH_T = 5000.0


@dataclass
class RuntimeSettings:
    """Container for process-wide runtime settings."""

    threads: int
    log_file: Optional[str]
    log_level: str


def load_thread_count(override: Optional[int] = None) -> int:
    """
    Return the worker cap for line solves.

    An explicit ``override`` (the ``--threads`` flag) wins over the
    ``OSMOFILT_THREADS`` environment variable. Anything unusable falls back to 1.
    """
    if override is not None:
        if override < 1:
            logger.warning("Ignoring non-positive thread count %d; using 1.", override)
            return 1
        return override

    raw = os.getenv(THREADS_ENV_VAR)
    if not raw or not raw.strip():
        return 1
    try:
        value = int(raw.strip())
    except ValueError:
        logger.warning("Ignoring %s=%r: not an integer.", THREADS_ENV_VAR, raw)
        return 1
    if value < 1:
        logger.warning("Ignoring %s=%d: must be at least 1.", THREADS_ENV_VAR, value)
        return 1
    return value


def load_log_file() -> Optional[str]:
    """Return the optional log file path from the environment."""
    path = os.getenv(LOG_FILE_ENV_VAR)
    if path and path.strip():
        return path.strip()
    return None


def load_log_level() -> str:
    """Return the configured log level name, ``INFO`` when unset or unknown."""
    name = (os.getenv(LOG_LEVEL_ENV_VAR) or "INFO").strip().upper()
    if not isinstance(logging.getLevelName(name), int):
        logger.warning("Unknown log level %r; using INFO.", name)
        return "INFO"
    return name


def load_runtime_settings(threads_override: Optional[int] = None) -> RuntimeSettings:
    """Load all runtime settings from the environment."""
    return RuntimeSettings(
        threads=load_thread_count(threads_override),
        log_file=load_log_file(),
        log_level=load_log_level(),
    )
