"""Tests for tokenizer.py."""

import pytest

from src.corpus.tokenizer import PAD, Tokenizer, split_pieces
from src.errors import InputError

TEXT = "The email address of Karen Arnold is karen.arnold@enron.com .\nSent: Monday"


@pytest.fixture
def tokenizer():
    """Fixture for a tokenizer built from one sentence."""
    return Tokenizer.build([TEXT])


def test_lossless(tokenizer):
    """Tests that decoding an encoding returns the original text."""
    assert tokenizer.decode(tokenizer.encode(TEXT)) == TEXT


def test_pad_is_zero(tokenizer):
    """Tests that the pad token has id 0."""
    assert tokenizer.vocab[0] == PAD
    assert tokenizer.pad_id == 0


def test_email_is_multi_token():
    """Tests that an address is split into chunks and punctuation."""
    pieces = [piece for piece, is_email in split_pieces(TEXT) if is_email]
    assert pieces == [" karen", ".", "arnold", "@", "enron", ".", "com"]


def test_unknown_email_chunk_spelled_out(tokenizer):
    """Tests that an unseen address falls back to single characters."""
    ids = tokenizer.encode(" is zed.quinn@corp.com")
    assert tokenizer.decode(ids) == " is zed.quinn@corp.com"
    # " is", then " zed", "quinn" and "corp" spelled out around known "." "@" "com"
    assert len(ids) == 1 + 4 + 1 + 5 + 1 + 4 + 1 + 1


def test_unknown_word(tokenizer):
    """Tests that an unseen word raises an InputError."""
    with pytest.raises(InputError, match="Banana"):
        tokenizer.encode("Banana")


def test_offsets_point_at_token_starts(tokenizer):
    """Tests that each offset is where its token's text begins."""
    ids, offsets = tokenizer.encode_with_offsets(TEXT)
    for token_id, offset in zip(ids, offsets, strict=True):
        token = tokenizer.vocab[token_id]
        assert TEXT[offset : offset + len(token)] == token


def test_save_and_load(tokenizer, tmp_path):
    """Tests that a saved vocabulary loads back unchanged."""
    path = tmp_path / "vocab.json"
    tokenizer.save(path)
    assert Tokenizer.load(path).vocab == tokenizer.vocab


def test_build_is_order_independent():
    """Tests that the vocabulary does not depend on text order."""
    assert Tokenizer.build(["a b", "c d"]).vocab == Tokenizer.build(["c d", "a b"]).vocab
