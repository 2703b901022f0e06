"""
Configuration management using Pydantic Settings
Loads process-level settings from environment variables and .env file
"""

from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field


class Settings(BaseSettings):
    """Process settings (run hyperparameters live in models.config_models)"""

    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=False,
        populate_by_name=True,
        extra="ignore",
    )

    # App Settings
    app_name: str = Field(default="HelioDet", alias="APP_NAME")
    app_version: str = Field(default="1.0.0", alias="APP_VERSION")
    debug: bool = Field(default=False, alias="DEBUG")
    log_level: str = Field(default="INFO", alias="HELIODET_LOG_LEVEL")

    # Workers (1 keeps every run bit-identical to serial execution)
    threads: int = Field(default=1, ge=1, alias="HELIODET_THREADS")

    # Paths
    dataset_root: str = Field(default="./data/synth", alias="HELIODET_DATASET_ROOT")
    runs_dir: str = Field(default="./runs", alias="HELIODET_RUNS_DIR")


# Global settings instance
settings = Settings()
