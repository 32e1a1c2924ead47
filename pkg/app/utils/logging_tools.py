import logging
from typing import Optional

from app.utils.settings import get_settings

LOG_FORMAT = "[%(asctime)s] [%(levelname)s] %(name)s: %(message)s"


def setup_logging(level: Optional[int] = None) -> None:
    """
    Setup logging configuration for the application.
    Level falls back to LOG_LEVEL from the environment.
    """
    if level is None:
        level = get_settings().log_level_value()
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)
