import os

import dotenv
import pytest
from pydantic import ValidationError

from sublab.config import Settings, get_settings

dotenv.load_dotenv(".env.defaults")


def test_properly_read_config() -> None:
    settings = get_settings("dev")
    for key in type(settings).model_fields:
        if key == "ENV":
            continue
        assert str(getattr(settings, key)) == os.environ[key]


def test_test_settings_are_serial_and_quiet(monkeypatch) -> None:
    monkeypatch.setenv("SUBLAB_THREADS", "8")
    settings = get_settings("test")
    assert settings.ENV == "test"
    assert settings.SUBLAB_THREADS == 1
    assert settings.LOG_LEVEL == "WARNING"


def test_threads_are_read_from_the_environment(monkeypatch) -> None:
    monkeypatch.setenv("SUBLAB_THREADS", "4")
    assert get_settings("dev").SUBLAB_THREADS == 4


def test_threads_must_be_positive(monkeypatch) -> None:
    monkeypatch.setenv("SUBLAB_THREADS", "0")
    with pytest.raises(ValidationError):
        Settings()


def test_get_settings_rejects_unknown_env() -> None:
    with pytest.raises(ValueError, match="Invalid environment"):
        get_settings("staging")
