import sys
from pathlib import Path

from loguru import logger

from effbench.app_config import Config
from effbench.consts import LOG_FILE_NAME


def configure_logging(config: Config):
    """replace every loguru sink with a retained log file plus stderr at LOG_LEVEL"""
    logger.remove()
    log_dir = Path(config.LOG_DIR)
    log_dir.mkdir(parents=True, exist_ok=True)
    logger.add(str(log_dir / LOG_FILE_NAME), retention=config.LOG_RETENTION, level="DEBUG")
    logger.add(sys.stderr, level=config.LOG_LEVEL, backtrace=config.DEBUG, diagnose=config.DEBUG)


def create_app(**test_config) -> Config:
    """Build the run configuration, with keyword overrides, and set up logging."""
    config = Config()
    config.update(test_config)
    configure_logging(config)
    logger.debug(f"Starting effbench (log dir {config.LOG_DIR})")
    return config
