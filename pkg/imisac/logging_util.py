import logging  # noqa I251
import os
import sys

WARNING = logging.WARNING
INFO = logging.INFO
DEBUG = logging.DEBUG
NOTSET = logging.NOTSET

LOG_LEVEL_ENV_VAR = "IMISAC_LOG_LEVEL"

_loggers = set()
_log_level = NOTSET
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
DEBUG_LOG_FORMAT = "%(asctime)s %(levelname)s [%(filename)s:%(lineno)d] %(message)s"
LOG_FORMAT = "[%(levelname)s] %(message)s"


def _formatter_for(level: int) -> logging.Formatter:
    if level == DEBUG:
        return logging.Formatter(fmt=DEBUG_LOG_FORMAT, datefmt=DATE_FORMAT)
    return logging.Formatter(fmt=LOG_FORMAT)


def get_logger(name: str) -> logging.Logger:
    """
    Logger writing to stdout at the level chosen by set_log_level(). Asking
    twice for the same name returns the same logger with a single handler.
    """
    logger = logging.getLogger(name=name)
    if not logger.handlers:
        handler = logging.StreamHandler(stream=sys.stdout)
        handler.setFormatter(_formatter_for(_log_level))
        logger.addHandler(handler)
    # Records are handled here; don't duplicate them through the root logger.
    logger.propagate = False

    if _log_level != NOTSET:
        logger.setLevel(_log_level)

    _loggers.add(logger)
    return logger


def set_log_level(log_level: int) -> None:
    """
    Set the imisac logging level for every logger created so far (and every
    logger created afterwards), switching to the verbose format for DEBUG.
    """
    global _log_level
    _log_level = log_level

    formatter = _formatter_for(log_level)
    for logger in _loggers:
        logger.setLevel(log_level)
        for handler in logger.handlers[:]:
            handler.setFormatter(formatter)


def log_level_from_env(default: int = INFO) -> int:
    """
    Resolve the level named by IMISAC_LOG_LEVEL (e.g. "DEBUG"), or the default
    if the variable is unset or unrecognized.
    """
    name = os.environ.get(LOG_LEVEL_ENV_VAR, "").strip().upper()
    level = logging.getLevelName(name) if name else default
    return level if isinstance(level, int) else default
