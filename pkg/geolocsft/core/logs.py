import logging

from rich.console import Console
from rich.logging import RichHandler

_CONFIGURED = False


def setup_logging(verbose: bool = False) -> None:
    """Sends log records to stderr as `time level event` lines; stdout stays reserved for data."""
    global _CONFIGURED
    level = logging.DEBUG if verbose else logging.INFO
    if _CONFIGURED:
        logging.getLogger().setLevel(level)
        return
    handler = RichHandler(
        console=Console(stderr=True),
        show_path=False,
        rich_tracebacks=False,
        log_time_format="%Y-%m-%dT%H:%M:%S",
    )
    logging.basicConfig(level=level, format="%(name)s: %(message)s", handlers=[handler])
    # keep third-party request chatter out of run logs
    for noisy in ("httpx", "openai", "urllib3"):
        logging.getLogger(noisy).setLevel(logging.WARNING)
    _CONFIGURED = True
