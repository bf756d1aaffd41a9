"""Testing fixtures."""

import numpy as np
import pytest

from src.sae.sae import SaeParams


@pytest.fixture
def sae():
    """Fixture for a random autoencoder at layer 1 with d_emb 4, h 8 and k 3."""
    rng = np.random.default_rng(17)
    w_dec = rng.normal(size=(4, 8))
    return SaeParams(
        w_enc=rng.normal(size=(8, 4)),
        w_dec=w_dec / np.linalg.norm(w_dec, axis=0),
        b_pre=rng.normal(size=4),
        k=3,
        k_aux=2,
        alpha_aux=0.0,
        layer=1,
    )


@pytest.fixture
def labelled():
    """Fixture for 200 labelled 8-dim features where coordinates 2 and 5 carry the class."""
    rng = np.random.default_rng(3)
    labels = rng.permutation(np.arange(200) % 2 == 0)
    features = rng.normal(size=(200, 8))
    features[:, 2] += np.where(labels, 2.0, -2.0)
    features[:, 5] -= np.where(labels, 1.5, -1.5)
    return features, labels
