import logging
from pathlib import Path

from tenacity import (
    before_sleep_log,
    retry,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

logger = logging.getLogger(__name__)

# Parallel file systems occasionally hand back EAGAIN/EINTR on large transfers.
TRANSIENT_ERRORS = (BlockingIOError, InterruptedError, TimeoutError)

transient_io = retry(
    retry=retry_if_exception_type(TRANSIENT_ERRORS),
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.05, max=1),
    before_sleep=before_sleep_log(logger, logging.WARNING),
    reraise=True,
)


def _as_path(path: str | Path) -> Path:
    if not str(path):
        raise FileNotFoundError("empty path")
    return Path(path)


@transient_io
def read_bytes(path: str | Path) -> bytes:
    return _as_path(path).read_bytes()


@transient_io
def write_bytes(path: str | Path, data: bytes) -> None:
    _as_path(path).write_bytes(data)
