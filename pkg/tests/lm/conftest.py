"""Testing fixtures."""

import numpy as np
import pytest

from src.corpus.tokenizer import Tokenizer
from src.lm.model import LmConfig, LmModel
from src.lm.training import LmTrainConfig, train_lm

EMAILS = {
    "Karen Arnold": "karen.arnold@enron.com",
    "Paul Baker": "p.baker@corp.com",
    "Nora Hill": "hill.nora@gas.net",
    "Steven Ward": "steven.ward@power.org",
}


@pytest.fixture
def tiny_model():
    """Fixture for an untrained three-block model over 20 tokens."""
    return LmModel(LmConfig(vocab_size=20, d_emb=16, n_layers=3, n_heads=2, seed=0))


@pytest.fixture
def tokens():
    """Fixture for a short random token sequence."""
    return np.random.default_rng(0).integers(1, 20, size=9).tolist()


@pytest.fixture(scope="module")
def memorized():
    """Fixture for a small model trained until it recites four email addresses."""
    texts = [f"The email address of {name} is {email} ." for name, email in EMAILS.items()]
    tokenizer = Tokenizer.build(texts)
    sequences = [tokenizer.encode(text) for text in texts] * 4
    config = LmConfig(vocab_size=tokenizer.vocab_size, d_emb=32, n_layers=2, n_heads=4, seed=0)
    train = LmTrainConfig(epochs=400, batch_size=16, lr=5e-3, seed=0)
    model, log = train_lm(config, train, sequences, sequences[:4])
    return model, tokenizer, log, EMAILS
