#!/usr/bin/env python3
import logging
import logging.config
import os
from typing import Optional

DEFAULT_LOG_FORMAT: str = "%(levelname)s - %(asctime)s - %(name)s - %(message)s"


class LoggingTrait:
    def get_logger(self) -> logging.Logger:
        return logging.getLogger(type(self).__name__)

    def log_debug(self, msg: str):
        self.get_logger().debug(msg)

    def log_info(self, msg: str):
        self.get_logger().info(msg)

    def log_warning(self, msg: str):
        self.get_logger().warning(msg)

    def log_error(self, msg: str):
        self.get_logger().error(msg)

    def log_exception(self, exc):
        self.get_logger().exception(exc)

    def log_lines(self, block: str, level: int = logging.INFO):
        logger = self.get_logger()
        for line in block.splitlines():
            logger.log(level, line)


def configure_logging(logging_ini: Optional[str] = None, verbose: bool = False) -> bool:
    """
    Load logging.ini when it exists, otherwise fall back to basicConfig

    @param logging_ini: optional path to a logging.config.fileConfig file
    @param verbose: DEBUG instead of INFO for the fallback configuration
    @return: True when the file configuration was used
    """
    if logging_ini and os.path.isfile(logging_ini):
        logging.config.fileConfig(logging_ini, disable_existing_loggers=False)
        return True

    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=DEFAULT_LOG_FORMAT,
    )
    logging.getLogger("asyncio").setLevel(logging.WARN)
    return False
