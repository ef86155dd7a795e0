"""Shared fixtures. Puts src/ on sys.path the way the root run scripts do."""
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from insectcam.config_loader import CONFIG_DIR  # noqa: E402
from insectcam.taxonomy import load_taxonomy  # noqa: E402


@pytest.fixture(scope="session")
def tree():
    return load_taxonomy()


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240611))


@pytest.fixture(scope="session")
def config_dir():
    return CONFIG_DIR
