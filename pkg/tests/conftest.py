"""
Shared fixtures for the test suite

Usage:
    pytest tests/ -v
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from kernel import HurstPair, TimeGrid  # noqa: E402
from sde import DriftSpec, MixedSdeSpec  # noqa: E402


@pytest.fixture
def grid():
    return TimeGrid(1.0, 256)


@pytest.fixture
def mixed_pair():
    return HurstPair(0.3, 0.7)


@pytest.fixture
def zero_spec(mixed_pair):
    return MixedSdeSpec(d=1, x0=np.zeros(1), a1=1.0, a2=0.5, A=np.eye(1), T=1.0, hp=mixed_pair)


@pytest.fixture
def sin_spec(mixed_pair):
    drift = DriftSpec(family="bounded_sin", amplitude=(0.5,), frequency=(1.0,))
    return MixedSdeSpec(d=1, x0=np.zeros(1), a1=1.0, a2=0.5, A=np.eye(1), T=1.0,
                        hp=mixed_pair, drift=drift)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte Carlo comparisons (deselect with -m 'not slow')")
