"""
Runtime settings for experiment runs
Values come from HIDDEN_PHYSICS_* environment variables or a local .env file
"""

import logging
from functools import lru_cache
from pathlib import Path
from typing import Literal, Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class RuntimeSettings(BaseSettings):
    """Process-wide knobs that are not part of an experiment's identity"""

    model_config = SettingsConfigDict(
        env_prefix="HIDDEN_PHYSICS_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    output_root: Path = Path("runs")
    workers: int = Field(default=1, ge=1)
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    progress_bars: bool = True
    torch_threads: Optional[int] = Field(default=None, ge=1)


@lru_cache(maxsize=1)
def get_settings() -> RuntimeSettings:
    return RuntimeSettings()


def setup_logging(level: Optional[str] = None) -> None:
    """Configure root logging once, at the entry point"""
    logging.basicConfig(
        level=getattr(logging, level or get_settings().log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
