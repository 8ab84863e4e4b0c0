import logging
import os
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic import ValidationError as PydanticValidationError

from .errors import ValidationError

logger = logging.getLogger(__name__)

_ENV_KEYS = {
    "out_dir": "STOCHSTAB_OUT_DIR",
    "seed": "STOCHSTAB_SEED",
    "workers": "STOCHSTAB_WORKERS",
    "log_level": "STOCHSTAB_LOG_LEVEL",
}


class Settings(BaseModel):
    """Process-wide defaults, read from the environment (and .env)."""

    model_config = ConfigDict(frozen=True)

    out_dir: str = Field(default="output", description="Default output directory")
    seed: int = Field(default=7, ge=0, lt=2**64, description="Default master seed")
    workers: int = Field(default=1, ge=1, description="Ensemble worker threads")
    log_level: str = Field(default="INFO", description="Logging level name")

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        value = value.upper()
        if value not in logging.getLevelNamesMapping():
            raise ValueError(f"unknown log level {value!r}")
        return value


def load_settings(env_file: Optional[str] = None) -> Settings:
    """Load settings from environment variables, after reading a .env file if present."""
    load_dotenv(env_file)

    values = {}
    for field, env_key in _ENV_KEYS.items():
        raw = os.getenv(env_key)
        if raw is not None and raw.strip() != "":
            values[field] = raw.strip()

    try:
        return Settings(**values)
    except PydanticValidationError as e:
        problems = "; ".join(
            f"{_ENV_KEYS[str(err['loc'][0])]}: {err['msg']}" for err in e.errors()
        )
        raise ValidationError(f"Invalid environment settings: {problems}") from e


def configure_logging(level: str) -> None:
    """Entry-point logging setup; library modules only create loggers."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
