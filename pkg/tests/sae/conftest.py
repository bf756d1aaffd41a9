"""Testing fixtures."""

import numpy as np
import pytest

from src.actcache.cache import ActCache
from src.sae.sae import SaeParams


def cache_of(vectors: np.ndarray, layer: int = 0, doc_length: int = 10) -> ActCache:
    """Wraps vectors into a cache, `doc_length` consecutive records per document."""
    n = len(vectors)
    return ActCache(
        layer=layer,
        doc_ids=np.arange(n, dtype=np.int64) // doc_length,
        token_index=np.arange(n, dtype=np.int64) % doc_length,
        vectors=vectors,
    )


@pytest.fixture
def random_params():
    """Fixture for a random autoencoder with d_emb 6, h 24 and k 4."""
    rng = np.random.default_rng(11)
    w_dec = rng.normal(size=(6, 24))
    return SaeParams(
        w_enc=rng.normal(size=(24, 6)),
        w_dec=w_dec / np.linalg.norm(w_dec, axis=0),
        b_pre=rng.normal(size=6),
        k=4,
        k_aux=3,
        alpha_aux=1 / 32,
    )


@pytest.fixture
def subspace_cache():
    """Fixture for 1000 vectors in R^4 that lie in a 3-dimensional subspace."""
    rng = np.random.default_rng(21)
    basis, _ = np.linalg.qr(rng.normal(size=(4, 3)))
    return cache_of(rng.normal(size=(1000, 3)) @ basis.T)


@pytest.fixture
def make_cache():
    """Fixture for the cache builder."""
    return cache_of
