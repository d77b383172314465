# src/eosmute/config/settings.py
from functools import lru_cache
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Project
    PROJECT_NAME: str = "eosmute"

    # Snippet/checkpoint cache (EOSMUTE_CACHE)
    CACHE: str = "./.eosmute_cache"

    # Logging
    LOG_DIR: str = "logs"
    LOG_LEVEL: str = "INFO"

    # Experiments
    JOBS: int = 1
    MAX_TOKENS: int = 224
    TORCH_THREADS: Optional[int] = None  # intra-op threads; torch default when unset

    model_config = SettingsConfigDict(
        env_prefix="EOSMUTE_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


@lru_cache
def get_settings() -> Settings:
    return Settings()


settings = get_settings()
