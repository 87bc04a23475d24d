import logging
import os
import sys

from tqdm import tqdm


class TqdmStderrHandler(logging.StreamHandler):
    """Writes records through tqdm so they land above any live progress bar."""

    def __init__(self):
        super().__init__(stream=sys.stderr)

    def emit(self, record: logging.LogRecord) -> None:
        try:
            tqdm.write(self.format(record), file=self.stream)
            self.flush()
        except Exception:
            self.handleError(record)


def _configure_logger(name: str = "xrid") -> logging.Logger:
    env_mode = os.getenv("ENVIRONMENT", "development")
    level_name = os.getenv("XRID_LOG_LEVEL", "INFO").upper()
    logger = logging.getLogger(name)

    # Remove existing handlers to avoid duplicates
    if logger.handlers:
        logger.handlers.clear()

    logger.setLevel(getattr(logging, level_name, logging.INFO))

    if env_mode == "production":
        formatter = logging.Formatter(
            '{"timestamp": "%(asctime)s", "level": "%(levelname)s", "message": "%(message)s", "module": "%(module)s"}'
        )
    else:
        formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    # stdout carries the command summaries only
    handler = TqdmStderrHandler()
    handler.setFormatter(formatter)
    logger.addHandler(handler)

    logger.propagate = False
    return logger


logger = _configure_logger()
