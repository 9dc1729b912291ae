"""
Environment configuration.

Values come from the process environment after `.env` is loaded; tokens are
only ever logged masked.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

load_dotenv()


class Settings:
    """Central place for environment-driven defaults."""

    LOG_LEVEL = os.getenv("EFFORT_LAB_LOG_LEVEL", "INFO")
    LOG_FILE = os.getenv("EFFORT_LAB_LOG_FILE")

    CACHE_DIR = Path(os.getenv("EFFORT_LAB_CACHE_DIR", ".cache/github"))
    GITHUB_API_URL = os.getenv("GITHUB_API_URL", "https://api.github.com")
    REQUEST_TIMEOUT = float(os.getenv("REQUEST_TIMEOUT", "30"))
    MAX_RETRIES = int(os.getenv("EFFORT_LAB_MAX_RETRIES", "3"))

    JOBS = int(os.getenv("EFFORT_LAB_JOBS", "0")) or (os.cpu_count() or 1)

    DATASETS_REGISTRY = Path(os.getenv("EFFORT_LAB_DATASETS", "config/datasets.json"))


TOKEN_ENV_VARS = {
    "github": "GITHUB_TOKEN",
}


def mask_secret(value: str) -> str:
    if len(value) > 8:
        return value[:4] + '*' * (len(value) - 8) + value[-4:]
    return '*' * len(value)


def get_api_token(service: str, required: bool = False, env_var: Optional[str] = None) -> Optional[str]:
    """Look up an API token from the environment; `env_var` overrides the service default."""
    env_var = env_var or TOKEN_ENV_VARS.get(service, service.upper() + '_TOKEN')
    token = os.getenv(env_var)

    if not token and required:
        logger.error(f"❌ Required API token missing: {service} (set {env_var})")
        raise ValueError(f"Missing required API token for service: {service}")

    if token:
        logger.debug(f"🔑 API token resolved: {service} -> {mask_secret(token)}")

    return token


def safe_settings_export() -> Dict[str, Any]:
    """Settings snapshot with secrets hidden, for run manifests."""
    exported: Dict[str, Any] = {
        "log_level": Settings.LOG_LEVEL,
        "cache_dir": str(Settings.CACHE_DIR),
        "github_api_url": Settings.GITHUB_API_URL,
        "request_timeout": Settings.REQUEST_TIMEOUT,
        "max_retries": Settings.MAX_RETRIES,
    }
    token = os.getenv(TOKEN_ENV_VARS["github"])
    exported["github_token"] = mask_secret(token) if token else None
    return exported
