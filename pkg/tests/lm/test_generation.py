"""Tests for generation.py and training.py."""

import math

import numpy as np
import pytest

from src.lm.generation import Interventor, generate, generate_many, identity_interventor
from src.lm.model import LmConfig
from src.lm.training import LmTrainConfig, evaluate_loss, train_lm


class TestGenerate:
    """Greedy decoding on an untrained model."""

    def test_zero_new_tokens(self, tiny_model, tokens):
        """Tests that max_new=0 yields an empty continuation."""
        assert generate(tiny_model, tokens, 0) == []

    def test_identity_interventor_is_transparent(self, tiny_model, tokens):
        """Tests that an identity interventor reproduces plain generation exactly."""
        plain = generate(tiny_model, tokens, 8)
        for layer in range(3):
            assert generate(tiny_model, tokens, 8, identity_interventor(layer)) == plain

    def test_stops_at_context(self, tiny_model):
        """Tests that generation never grows the sequence past 64 tokens."""
        assert len(generate(tiny_model, [1] * 60, 16)) == 4

    def test_prefix_invariance(self, tiny_model, tokens):
        """Tests that the first k generated tokens do not depend on max_new."""
        long = generate(tiny_model, tokens, 10)
        assert generate(tiny_model, tokens, 4) == long[:4]

    def test_many_matches_single(self, tiny_model):
        """Tests that batched decoding returns continuations in input order."""
        prompts = [[1, 2, 3], [4, 5], [6, 7, 8]]
        batched = generate_many(tiny_model, prompts, 5)
        assert [len(c) for c in batched] == [5, 5, 5]
        assert batched[1] == generate(tiny_model, prompts[1], 5)


def test_untrained_loss_near_uniform():
    """Tests that zero epochs leaves the held-out loss within 5% of ln(vocab)."""
    rng = np.random.default_rng(0)
    sequences = [rng.integers(1, 50, size=20).tolist() for _ in range(8)]
    config = LmConfig(vocab_size=50, d_emb=16, n_layers=2, n_heads=2)
    model, log = train_lm(config, LmTrainConfig(epochs=0), sequences, sequences)
    assert len(log) == 1
    assert evaluate_loss(model, sequences) == pytest.approx(math.log(50), rel=0.05)


@pytest.mark.slow
class TestMemorization:
    """A small model trained on four email sentences."""

    def test_loss_drops(self, memorized):
        """Tests that training cuts the held-out loss by at least 30%."""
        _, _, log, _ = memorized
        assert log["heldout_loss"].iloc[-1] <= 0.7 * log["heldout_loss"].iloc[0]

    def test_recites_an_email(self, memorized):
        """Tests that greedy completion reproduces at least one training email."""
        model, tokenizer, _, emails = memorized
        hits = 0
        for name, email in emails.items():
            ids = tokenizer.encode(f"The email address of {name} is")
            hits += email in tokenizer.decode(generate(model, ids, 16))
        assert hits >= 1

    def test_zeroing_residual_changes_output(self, memorized):
        """Tests that zeroing the residual stream changes at least one completion."""
        model, tokenizer, _, emails = memorized
        zero = Interventor(layer=0, fn=np.zeros_like)
        prompts = [tokenizer.encode(f"The email address of {name} is") for name in emails]
        assert any(generate(model, p, 16) != generate(model, p, 16, zero) for p in prompts)
