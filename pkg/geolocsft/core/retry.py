import logging
import random
import time
from dataclasses import dataclass
from typing import Callable, Optional, TypeVar

from geolocsft.core.errors import HttpStatus, RateLimited, Timeout, TransportError

T = TypeVar("T")

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BackoffPolicy:
    """Exponential backoff with full jitter: sleep ~ U(0, min(cap, base * 2**retry))."""
    max_retries: int = 3
    base_s: float = 1.0
    cap_s: float = 60.0

    def delay(self, retry: int, rng: random.Random) -> float:
        return rng.uniform(0.0, min(self.cap_s, self.base_s * (2 ** retry)))


def call_with_backoff(
        fn: Callable[[], T],
        is_retryable: Callable[[Exception], bool],
        policy: BackoffPolicy,
        sleep: Callable[[float], None] = time.sleep,
        rng: Optional[random.Random] = None,
        on_retry: Optional[Callable[[int, Exception], None]] = None,
) -> T:
    """Calls fn, retrying retryable exceptions up to policy.max_retries times.
    The last exception is re-raised once retries are exhausted.
    """
    rng = rng or random.Random()
    retry = 0
    while True:
        try:
            return fn()
        except Exception as e:
            if not is_retryable(e) or retry >= policy.max_retries:
                raise
            wait = policy.delay(retry, rng)
            logger.debug("Retry %d/%d after %s, sleeping %.2fs", retry + 1, policy.max_retries, type(e).__name__, wait)
            if on_retry is not None:
                on_retry(retry + 1, e)
            sleep(wait)
            retry += 1


def is_transient(error: Exception) -> bool:
    """Timeouts, rate limits, connection failures and 5xx responses are worth retrying."""
    if isinstance(error, HttpStatus):
        return error.code >= 500
    return isinstance(error, (Timeout, RateLimited)) or type(error) is TransportError
