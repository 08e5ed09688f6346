"""
Process-level runtime settings.

Settings come from environment variables (and a `.env` file loaded by the CLI):
- FEDCYCLE_OUTPUT_DIR: overrides the output directory of every experiment config
- FEDCYCLE_FRAME_CAP: maximum transport frame size in bytes (default 64 MiB)
- FEDCYCLE_TCP_HOST: host the TCP transport binds to (default 127.0.0.1)
- FEDCYCLE_POLL_INTERVAL: seconds between server-side receive polls
"""
from typing import Optional
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

DEFAULT_FRAME_CAP = 64 * 1024 * 1024


class RuntimeSettings(BaseSettings):
    """Environment-driven settings shared by the CLI, trainers and transports."""

    model_config = SettingsConfigDict(env_prefix="FEDCYCLE_", extra="ignore")

    output_dir: Optional[str] = None
    frame_cap: int = Field(default=DEFAULT_FRAME_CAP, gt=0)
    tcp_host: str = "127.0.0.1"
    poll_interval: float = Field(default=0.05, gt=0)


_settings: Optional[RuntimeSettings] = None


def get_settings() -> RuntimeSettings:
    """Get or create the cached runtime settings."""
    global _settings
    if _settings is None:
        _settings = RuntimeSettings()
    return _settings


def reset_settings() -> None:
    """Drop the cached settings so the next call re-reads the environment."""
    global _settings
    _settings = None
