"""
Pytest configuration and fixtures for the PMRWM tuning tests.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Scripts import each other as top-level modules
sys.path.insert(0, str(Path(__file__).parent.parent))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo runs (deselect with -m 'not slow')")


@pytest.fixture
def project_root() -> Path:
    """Return the project root directory."""
    return Path(__file__).parent.parent.parent


@pytest.fixture
def configs_dir(project_root: Path) -> Path:
    """Return the command config directory."""
    return project_root / "data" / "configs"


@pytest.fixture
def schemas_dir(project_root: Path) -> Path:
    """Return the schemas directory."""
    return project_root / "schemas"


@pytest.fixture
def rng() -> np.random.Generator:
    """Fixed-seed generator."""
    return np.random.default_rng(20240611)
