"""Testing fixtures."""

import pytest

from src.corpus.split import CorpusConfig, build_split
from src.corpus.subjects import generate_subjects


@pytest.fixture
def subjects():
    """Fixture for a small pool of subjects."""
    return generate_subjects(20, seed=7)


@pytest.fixture
def small_config():
    """Fixture for a corpus configuration small enough for unit tests."""
    return CorpusConfig(n_subjects=20, n_docs=200, pii_fraction=0.2)


@pytest.fixture
def split_and_tokenizer(small_config):
    """Fixture for a split built from the small configuration."""
    return build_split(small_config, seed=3)
