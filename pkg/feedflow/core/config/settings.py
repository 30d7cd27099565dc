# feedflow/core/config/settings.py
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class FeedflowSettings(BaseSettings):
    """Process-level settings read from FEEDFLOW_* environment variables and .env"""

    LOG_LEVEL: str = "INFO"
    OUTPUT_DIR: str = "out"
    CONFIG_FILE: Optional[str] = None

    # Simulation
    WORKERS: int = 1
    RUN_SLOW: bool = False

    model_config = SettingsConfigDict(
        env_prefix="FEEDFLOW_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",  # Allow unrelated entries in a shared .env
    )


settings = FeedflowSettings()
