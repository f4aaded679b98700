"""Configuration management using pydantic-settings."""

from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    # Data / artifacts
    fewlabel_data_dir: Optional[str] = Field(
        default=None, description="Default dataset root (directory with a label manifest)"
    )
    artifact_dir: str = Field(default="artifacts", description="Root for checkpoints and logs")

    # Runtime
    device: str = Field(default="cpu", description="Torch device for training and evaluation")
    deterministic: bool = Field(default=True, description="Force deterministic torch kernels")
    num_threads: int = Field(default=0, ge=0, description="Torch intra-op threads (0 = default)")

    # Logging Configuration
    log_level: str = Field(default="INFO", description="Logging level")
    log_format: str = Field(default="json", description="Logging format (json or text)")

    @property
    def artifact_path(self) -> Path:
        """Get artifact root as a path."""
        return Path(self.artifact_dir)

    @property
    def data_path(self) -> Optional[Path]:
        """Get dataset root as a path, if configured."""
        return Path(self.fewlabel_data_dir) if self.fewlabel_data_dir else None


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
