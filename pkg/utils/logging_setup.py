# utils/logging_setup.py
import logging
import os

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(log_file: str = "protoasnet.log") -> logging.Logger:
    """Process-wide protoasnet logger: INFO and up to the log file, WARNING and up to the console.

    PROTOASNET_LOG overrides the file path, PROTOASNET_LOG_LEVEL the file level.
    """
    logger = logging.getLogger("protoasnet")
    logger.setLevel(logging.DEBUG)

    if not logger.handlers:
        formatter = logging.Formatter(LOG_FORMAT)

        fh = logging.FileHandler(os.environ.get("PROTOASNET_LOG", log_file))
        fh.setLevel(os.environ.get("PROTOASNET_LOG_LEVEL", "INFO").upper())
        fh.setFormatter(formatter)

        # training chatter stays in the file
        ch = logging.StreamHandler()
        ch.setLevel(logging.WARNING)
        ch.setFormatter(formatter)

        logger.addHandler(fh)
        logger.addHandler(ch)

    return logger


def set_console_level(level: int) -> None:
    """Change the console verbosity only"""
    for handler in logger.handlers:
        if isinstance(handler, logging.StreamHandler) and not isinstance(handler, logging.FileHandler):
            handler.setLevel(level)


# Singleton logger instance
logger = setup_logging()
