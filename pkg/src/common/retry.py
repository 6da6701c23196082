"""
Retry utilities using tenacity library.
Provides reusable retry decorators for dataset and checkpoint file I/O.
"""
import logging

from tenacity import (
    before_sleep_log,
    retry,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

logger = logging.getLogger(__name__)


def retry_on_io_error(
    max_attempts: int = 3,
    min_wait: float = 0.1,
    max_wait: float = 2.0,
    multiplier: float = 2.0,
):
    """
    Retry decorator for transient file-system errors with exponential backoff.

    Args:
        max_attempts: Maximum number of attempts
        min_wait: Minimum wait time in seconds
        max_wait: Maximum wait time in seconds
        multiplier: Multiplier for exponential backoff

    Returns:
        Retry decorator

    Example:
        @retry_on_io_error(max_attempts=3)
        def write_tensor(path, array):
            ...
    """
    return retry(
        stop=stop_after_attempt(max_attempts),
        wait=wait_exponential(multiplier=multiplier, min=min_wait, max=max_wait),
        retry=retry_if_exception_type((OSError, TimeoutError)),
        before_sleep=before_sleep_log(logger, logging.WARNING),
        reraise=True,
    )
