"""Tests for ranking.py."""

import numpy as np
import pytest

from src.corpus.split import PiiSpan
from src.errors import DataError, ParameterError
from src.lm.model import LmConfig, LmModel
from src.sae.ranking import (
    FeatureRanking,
    rank_latents,
    rank_neurons,
    rank_pii_features,
    rank_pii_neurons,
)
from src.sae.sae import SaeParams, encode


@pytest.fixture
def identity_params():
    """Fixture for an autoencoder whose latents are the residual coordinates, k = 1."""
    return SaeParams(w_enc=np.eye(8), w_dec=np.eye(8), b_pre=np.zeros(8), k=1, k_aux=1, alpha_aux=0.0)


def test_single_token_one_hot(identity_params, make_cache):
    """Tests that a lone token firing latent 7 puts latent 7 first."""
    vector = np.zeros((1, 8))
    vector[0, 7] = 2.5
    ranking = rank_latents(identity_params, make_cache(vector), [PiiSpan(doc_id=0, start=0, end=0)])
    assert int(ranking.indices[0]) == 7
    assert ranking.magnitudes[0] == 2.5


def test_ties_go_to_lower_index():
    """Tests that equal aggregates are ordered by ascending index."""
    ranking = FeatureRanking.from_aggregates(np.array([1.0, 3.0, 3.0, 0.0]))
    assert ranking.indices.tolist() == [1, 2, 0, 3]
    assert ranking.magnitudes.tolist() == [3.0, 3.0, 1.0, 0.0]


def test_matches_token_by_token_accumulation(random_params, make_cache):
    """Tests that ranking equals a naive per-token accumulation over all spans."""
    cache = make_cache(np.random.default_rng(4).normal(size=(30, 6)))
    spans = [PiiSpan(doc_id=0, start=2, end=5), PiiSpan(doc_id=2, start=0, end=9)]
    totals = np.zeros(random_params.h)
    for span in spans:
        for t in range(span.start, span.end + 1):
            totals += np.abs(encode(random_params, cache.doc_vectors(span.doc_id)[t]))
    ranking = rank_latents(random_params, cache, spans)
    assert np.allclose(ranking.magnitudes, np.sort(totals)[::-1], atol=1e-12)
    assert np.allclose(totals[ranking.indices], ranking.magnitudes, atol=1e-12)


def test_neurons_use_raw_magnitudes(make_cache):
    """Tests that neuron ranking sums |a| per coordinate."""
    cache = make_cache(np.array([[1.0, -5.0, 2.0], [1.0, 0.0, -2.0]]))
    ranking = rank_neurons(cache, [PiiSpan(doc_id=0, start=0, end=1)])
    assert ranking.indices.tolist() == [1, 2, 0]
    assert ranking.magnitudes.tolist() == [5.0, 4.0, 2.0]


def test_span_outside_document(identity_params, make_cache):
    """Tests that a span past the document end raises a DataError naming the doc."""
    with pytest.raises(DataError, match="doc 0"):
        rank_latents(identity_params, make_cache(np.zeros((3, 8))), [PiiSpan(doc_id=0, start=2, end=4)])


def test_top_is_sorted():
    """Tests that top-k indices come back ascending."""
    ranking = FeatureRanking.from_aggregates(np.array([0.5, 9.0, 0.1, 4.0]))
    assert ranking.top(2) == (1, 3)
    assert ranking.top(0) == ()
    with pytest.raises(ParameterError):
        ranking.top(5)


def test_csv_round_trip(tmp_path):
    """Tests that a saved ranking loads back unchanged."""
    ranking = FeatureRanking.from_aggregates(np.random.default_rng(0).random(10))
    ranking.save(tmp_path / "ranking.csv")
    loaded = FeatureRanking.load(tmp_path / "ranking.csv")
    assert np.array_equal(loaded.indices, ranking.indices)
    assert np.array_equal(loaded.magnitudes, ranking.magnitudes)


class TestFromModel:
    """Ranking straight from language model documents."""

    @pytest.fixture
    def model(self):
        """Fixture for an untrained model with d_emb 8."""
        return LmModel(LmConfig(vocab_size=10, d_emb=8, n_layers=2, n_heads=2, seed=3))

    def test_features_and_neurons(self, model, identity_params):
        """Tests that both rankings cover every coordinate."""
        spans = [PiiSpan(doc_id=4, start=1, end=2)]
        tokens = {4: [1, 2, 3, 4]}
        assert len(rank_pii_features(identity_params, model, spans, tokens, layer=1)) == 8
        assert len(rank_pii_neurons(model, spans, tokens, layer=1)) == 8

    def test_missing_document(self, model, identity_params):
        """Tests that a span whose document is unknown raises a DataError naming it."""
        with pytest.raises(DataError, match="doc 9"):
            rank_pii_features(identity_params, model, [PiiSpan(doc_id=9, start=0, end=0)], {}, layer=0)
