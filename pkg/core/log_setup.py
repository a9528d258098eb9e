import sys

from loguru import logger

STDERR_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{function}:{line} - {message}"


def setup_logging(level: str = "INFO", log_file=None):
    """Replace loguru's default sink with the project's stderr sink, plus an optional run log."""
    logger.remove()
    logger.add(sys.stderr, format=STDERR_FORMAT, level=level.upper())
    if log_file is not None:
        logger.add(str(log_file), format=FILE_FORMAT, level="DEBUG", enqueue=True)
    return logger
