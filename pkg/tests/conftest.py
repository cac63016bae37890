"""Pytest configuration and fixtures."""
import numpy as np
import pytest

from probmetrics.config import get_settings
from probmetrics.models import AtomSet, GaussianMixture
from probmetrics.schemas import BoundParams


@pytest.fixture
def standard_normal():
    """N(0, 1)."""
    return GaussianMixture.gaussian(0.0, 1.0)


@pytest.fixture
def shifted_normal():
    """N(1, 1)."""
    return GaussianMixture.gaussian(1.0, 1.0)


@pytest.fixture
def bimodal():
    """1/2 N(-1, 1) + 1/2 N(1, 1)."""
    return GaussianMixture([0.5, 0.5], [[-1.0], [1.0]], [[[1.0]], [[1.0]]])


@pytest.fixture
def standard_normal_2d():
    return GaussianMixture.gaussian([0.0, 0.0], np.eye(2))


@pytest.fixture
def test_mixtures():
    """Five 1-D mixtures with different shapes."""
    return [
        GaussianMixture.gaussian(0.0, 1.0),
        GaussianMixture.gaussian(0.5, 2.0),
        GaussianMixture([0.5, 0.5], [[-1.0], [1.0]], [[[1.0]], [[1.0]]]),
        GaussianMixture([0.3, 0.7], [[-2.0], [1.0]], [[[0.8]], [[1.5]]]),
        GaussianMixture([0.2, 0.5, 0.3], [[-1.5], [0.0], [2.0]], [[[1.0]], [[0.9]], [[1.2]]]),
    ]


@pytest.fixture
def translate_pair(standard_normal):
    """Factory for the pair (N(0,1), N(h,1))."""
    def make(h):
        return standard_normal, GaussianMixture.gaussian(h, 1.0)
    return make


@pytest.fixture
def default_params():
    return BoundParams(p=2, q=2, epsilon=0.1, d=1)


@pytest.fixture
def random_atoms():
    """Factory for uniform or random-mass atom sets."""
    def make(rng, n, d, uniform=False):
        locations = rng.normal(size=(n, d))
        if uniform:
            return AtomSet.uniform(locations)
        masses = rng.uniform(0.2, 1.0, size=n)
        return AtomSet(locations, masses / masses.sum())
    return make


@pytest.fixture
def settings_override(monkeypatch):
    """Set environment overrides and refresh the cached settings."""
    def apply(**values):
        for key, value in values.items():
            monkeypatch.setenv(key, str(value))
        get_settings.cache_clear()
    yield apply
    get_settings.cache_clear()
