import os

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

from sublab.log import get_logger

log = get_logger(__name__)


class Settings(BaseSettings):
    # Committed defaults; a git-ignored `.env` or real env vars override them.
    model_config = SettingsConfigDict(
        env_file=".env.defaults",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    ENV: str = "dev"
    LOG_LEVEL: str = "INFO"

    # Caps how many experiment conditions the harness runs concurrently.
    SUBLAB_THREADS: int = Field(default=1, ge=1)
    OUTPUT_DIR: str = "runs"


class DevSettings(Settings):
    ENV: str = "dev"


class TestSettings(Settings):
    # Tests compare reports across runs; keep them serial and quiet.
    ENV: str = "test"
    LOG_LEVEL: str = "WARNING"


_SETTINGS_BY_ENV: dict[str, type[Settings]] = {
    "dev": DevSettings,
    "test": TestSettings,
}


def get_settings(env: str = "dev") -> Settings:
    log.debug("getting settings for env: %s", env)
    try:
        settings_cls = _SETTINGS_BY_ENV[env.lower()]
    except KeyError:
        raise ValueError(
            f"Invalid environment {env!r}. Must be 'dev' or 'test'."
        ) from None
    if settings_cls is TestSettings:
        # Explicit values win over env vars so a stray SUBLAB_THREADS cannot
        # parallelise the test suite.
        return settings_cls(SUBLAB_THREADS=1, LOG_LEVEL="WARNING")
    return settings_cls()


_env = os.environ.get("ENV", "dev")

settings = get_settings(env=_env)
