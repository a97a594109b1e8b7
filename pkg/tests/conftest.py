import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from geometry import ImageGeometry  # noqa: E402
from runconfig import RunConfig  # noqa: E402


@pytest.fixture
def geo():
    return ImageGeometry(0.005, 0.069, 1.0, 64, 64)


@pytest.fixture
def small_geo():
    return ImageGeometry(0.005, 0.037, 0.8, 16, 16)


@pytest.fixture
def config():
    return RunConfig.load(None, [])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _no_config_env(monkeypatch):
    monkeypatch.delenv("SPINESURF_CONFIG", raising=False)
    monkeypatch.delenv("SPINESURF_THREADS", raising=False)


def numeric_gradient(func, array: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences of scalar `func()` with respect to every entry of `array` (modified in place)."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        plus = func()
        flat[i] = saved - step
        minus = func()
        flat[i] = saved
        out[i] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))
