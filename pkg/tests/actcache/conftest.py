"""Testing fixtures."""

import numpy as np
import pytest

from src.actcache.cache import ActCache
from src.lm.model import LmConfig, LmModel


@pytest.fixture
def tiny_model():
    """Fixture for an untrained two-block model."""
    return LmModel(LmConfig(vocab_size=12, d_emb=8, n_layers=2, n_heads=2, seed=1))


@pytest.fixture
def docs():
    """Fixture for two tokenized documents of lengths 3 and 5."""
    return [(10, [1, 2, 3]), (11, [4, 5, 6, 7, 8])]


@pytest.fixture
def ten_records():
    """Fixture for a hand-built cache of ten records over three documents."""
    doc_ids = np.array([0, 0, 0, 1, 1, 2, 2, 2, 2, 2])
    token_index = np.array([0, 1, 2, 0, 1, 0, 1, 2, 3, 4])
    vectors = np.arange(20, dtype=float).reshape(10, 2)
    return ActCache(layer=0, doc_ids=doc_ids, token_index=token_index, vectors=vectors)
