"""Configuration utilities: environment settings and flat ``key = value`` files."""
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, Union
import os


class ConfigError(ValueError):
    """Raised for malformed or unknown configuration entries."""


@dataclass(frozen=True)
class AppSettings:
    """Application configuration loaded from environment variables."""

    env: str
    model_registry_path: Path
    default_model_version: str
    service_name: str
    eval_max_workers: int
    job_storage_dir: Path
    log_level: str

    @staticmethod
    def from_env() -> "AppSettings":
        return AppSettings(
            env=os.getenv("APP_ENV", "dev"),
            model_registry_path=Path(os.getenv("MODEL_REGISTRY_PATH", "config/model_store")),
            default_model_version=os.getenv("DEFAULT_MODEL_VERSION", "v1"),
            service_name=os.getenv("SERVICE_NAME", "attention-steering"),
            eval_max_workers=int(os.getenv("EVAL_MAX_WORKERS", "2")),
            job_storage_dir=Path(os.getenv("JOB_STORAGE_DIR", "data/jobs")),
            log_level=os.getenv("LOG_LEVEL", "INFO"),
        )


@lru_cache()
def get_settings() -> AppSettings:
    """Return cached application settings."""

    return AppSettings.from_env()


def parse_flat_config(text: str, source: str = "<string>") -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""

    entries: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def load_flat_config(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        return parse_flat_config(f.read(), source=str(path))


__all__ = ["AppSettings", "ConfigError", "get_settings", "load_flat_config", "parse_flat_config"]
