"""
Core application configuration and settings
"""

import logging
import os
import sys
from functools import lru_cache

from dotenv import load_dotenv
from pydantic import BaseModel, field_validator

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class Settings(BaseModel):
    """Process-level settings read from the environment (and an optional .env)"""

    log_level: str = "INFO"
    output_dir: str = "reports"

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        level = value.upper()
        if level not in logging.getLevelNamesMapping():
            raise ValueError(f"unknown log level {value!r}")
        return level


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Load settings once per process"""
    load_dotenv()
    return Settings(
        log_level=os.getenv("LOG_LEVEL", "INFO"),
        output_dir=os.getenv("LEGION_OUTPUT_DIR", "reports"),
    )


def configure_logging(level: str | None = None) -> None:
    """Configure root logging; stdout stays reserved for command output"""
    settings = get_settings()
    logging.basicConfig(
        level=level or settings.log_level,
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )
    logger.debug(f"Logging configured at {level or settings.log_level}")
