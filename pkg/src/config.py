from functools import lru_cache
from pathlib import Path
from typing import Any, Union

from dotenv import dotenv_values
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide settings loaded from ``SPINE_*`` environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="SPINE_",
        env_file=".env",
        extra="ignore",
        case_sensitive=False,
    )

    # Execution
    threads: int = Field(default=1, ge=1)
    default_seed: int = Field(default=0)

    # Logging
    log_level: str = Field(default="INFO")
    log_format: str = Field(default="json")  # json or console

    # Training guards
    grad_clip: float = Field(default=1e3, gt=0)
    max_growth_factor: float = Field(default=4.0, ge=1)

    # Optional local dataset locations used by the slow suite
    mnist_dir: Union[Path, None] = Field(default=None)
    uci_dir: Union[Path, None] = Field(default=None)


@lru_cache
def get_settings() -> Settings:
    """Cached settings instance."""
    return Settings()


def read_run_config(path: Union[str, Path]) -> dict[str, Any]:
    """
    Read a flat ``key=value`` run file.

    Keys are lower-cased and dashes become underscores so the file can use
    the same spelling as the command-line flags. Empty values are dropped.
    """
    values = dotenv_values(path)
    return {
        key.strip().lower().replace("-", "_"): value
        for key, value in values.items()
        if value not in (None, "")
    }
