"""Testing fixtures."""

import numpy as np
import pytest


@pytest.fixture
def separable():
    """Fixture for two well-separated 2-D clusters of 100 points each."""
    rng = np.random.default_rng(0)
    positives = rng.normal(loc=2.0, scale=0.3, size=(100, 2))
    negatives = rng.normal(loc=-2.0, scale=0.3, size=(100, 2))
    labels = np.array([True] * 100 + [False] * 100)
    return np.vstack([positives, negatives]), labels


def planted_layers(seed: int, n: int = 200, d: int = 8, n_layers: int = 4, signal_layer: int = 2):
    """Noise features at every layer, with the label written into one coordinate at one layer."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 2 == 0)
    features = {layer: rng.normal(size=(n, d)) for layer in range(n_layers)}
    features[signal_layer][:, 0] += np.where(labels, 3.0, -3.0)
    return features, labels


@pytest.fixture
def planted():
    """Fixture for the planted-signal generator."""
    return planted_layers
