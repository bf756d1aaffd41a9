"""Testing fixtures."""

import numpy as np
import pytest


@pytest.fixture
def rng():
    """Fixture for a seeded random generator."""
    return np.random.default_rng(1234)
