import os

# quiet defaults for the whole suite; must precede any app import
os.environ.setdefault("ENVIRONMENT", "test")
os.environ.setdefault("XRID_PROGRESS", "false")
os.environ.setdefault("XRID_LOG_LEVEL", "WARNING")

import numpy as np
import pytest


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path, monkeypatch):
    from app.config.env_config import env
    monkeypatch.setattr(env, "XRID_CACHE_DIR", str(tmp_path / "cache"))
    monkeypatch.setattr(env, "XRID_PROGRESS", False)
