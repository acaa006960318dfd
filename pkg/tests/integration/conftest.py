"""
Pytest configuration for CLI integration tests.

Each test runs from its own temporary directory with the STRATA_* environment
cleared, so no local .env leaks into a run and cached settings are rebuilt.
"""

import os
from pathlib import Path

import pytest

from core.settings import get_settings

PROJECT_ROOT = Path(__file__).parent.parent.parent
EXPERIMENTS = PROJECT_ROOT / "experiments"


@pytest.fixture(autouse=True)
def isolated_environment(tmp_path, monkeypatch):
    for name in list(os.environ):
        if name.startswith("STRATA_"):
            monkeypatch.delenv(name)
    monkeypatch.chdir(tmp_path)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def experiment():
    """Path of a bundled experiment config."""

    def _path(name: str) -> Path:
        return EXPERIMENTS / name

    return _path
