"""Tests for training.py."""

import numpy as np
import pytest

from src.actcache.cache import ActCache
from src.errors import InputError
from src.numerics.tensor import Tensor
from src.sae.sae import SaeConfig, encode
from src.sae.training import (
    fraction_of_variance_unexplained,
    init_params,
    mean_squared_error,
    sae_loss,
    train_sae,
    unit_norm_columns,
)


def _tensors(params):
    return (
        Tensor(params.w_enc, requires_grad=True),
        Tensor(params.w_dec, requires_grad=True),
        Tensor(params.b_pre, requires_grad=True),
    )


class TestLoss:
    """The per-batch objective."""

    def test_alpha_zero_is_mse(self, random_params):
        """Tests that with alpha 0 the total loss equals the reconstruction term."""
        batch = np.random.default_rng(3).normal(size=(16, 6))
        dead = np.zeros(24, dtype=bool)
        dead[::2] = True
        loss = sae_loss(*_tensors(random_params), batch, 4, 3, 0.0, dead)
        assert loss.aux.item() > 0
        assert loss.total.item() == loss.mse.item()

    def test_no_dead_no_aux(self, random_params):
        """Tests that the auxiliary term vanishes when no latent is dead."""
        batch = np.random.default_rng(4).normal(size=(8, 6))
        loss = sae_loss(*_tensors(random_params), batch, 4, 3, 0.5, np.zeros(24, dtype=bool))
        assert loss.aux.item() == 0.0
        assert loss.n_dead == 0

    def test_aux_reaches_only_dead_encoder_rows(self, random_params):
        """Tests that the auxiliary gradient touches only encoder rows of dead latents."""
        batch = np.random.default_rng(5).normal(size=(8, 6))
        dead = np.zeros(24, dtype=bool)
        dead[[1, 7, 9]] = True
        w_enc, w_dec, b_pre = _tensors(random_params)
        loss = sae_loss(w_enc, w_dec, b_pre, batch, 4, 3, 1.0, dead)
        loss.aux.backward()
        touched = np.flatnonzero(np.any(w_enc.grad != 0, axis=1))
        assert set(touched.tolist()) <= {1, 7, 9}

    def test_mse_matches_numpy(self, random_params):
        """Tests that the reconstruction term is the mean squared reconstruction error."""
        batch = np.random.default_rng(6).normal(size=(10, 6))
        loss = sae_loss(*_tensors(random_params), batch, 4, 3, 0.0, np.zeros(24, dtype=bool))
        z = encode(random_params, batch)
        expected = np.mean(np.sum((batch - z @ random_params.w_dec.T - random_params.b_pre) ** 2, axis=1))
        assert loss.mse.item() == pytest.approx(expected, rel=1e-12)


def test_unit_norm_columns():
    """Tests that every column is scaled to norm one and zero columns are kept."""
    matrix = np.array([[3.0, 0.0], [4.0, 0.0]])
    assert unit_norm_columns(matrix).tolist() == [[0.6, 0.0], [0.8, 0.0]]


def test_init_centres_on_mean(subspace_cache):
    """Tests that b_pre starts at the mean activation with unit decoder columns."""
    params = init_params(subspace_cache, SaeConfig(h=8, k=3, k_aux=2))
    assert np.allclose(params.b_pre, subspace_cache.vectors.mean(axis=0))
    assert np.allclose(np.linalg.norm(params.w_dec, axis=0), 1.0, atol=1e-12)


def test_empty_cache(make_cache):
    """Tests that training on an empty cache raises an InputError."""
    with pytest.raises(InputError):
        train_sae(make_cache(np.zeros((0, 4))), SaeConfig(h=8, k=2, k_aux=2))


class TestTrainSae:
    """Fitting the autoencoder."""

    @pytest.fixture(scope="class")
    def trained(self):
        """Fixture for an autoencoder trained 2000 steps on subspace data."""
        rng = np.random.default_rng(21)
        basis, _ = np.linalg.qr(rng.normal(size=(4, 3)))
        vectors = rng.normal(size=(1000, 3)) @ basis.T
        cache = ActCache(
            layer=0,
            doc_ids=np.arange(1000, dtype=np.int64) // 10,
            token_index=np.arange(1000, dtype=np.int64) % 10,
            vectors=vectors,
        )
        config = SaeConfig(h=8, k=3, k_aux=2, lr=1e-2, batch_size=50, epochs=100, dead_threshold=500, seed=0)
        params, log = train_sae(cache, config)
        return cache, config, params, log

    @pytest.fixture(scope="class")
    def held_out(self):
        """Fixture for 500 fresh vectors from the training subspace."""
        basis, _ = np.linalg.qr(np.random.default_rng(21).normal(size=(4, 3)))
        vectors = np.random.default_rng(99).normal(size=(500, 3)) @ basis.T
        return ActCache(
            layer=0,
            doc_ids=np.arange(500, dtype=np.int64) // 10,
            token_index=np.arange(500, dtype=np.int64) % 10,
            vectors=vectors,
        )

    def test_reconstruction_improves(self, trained):
        """Tests that the final error is below 10% of the initial error."""
        cache, config, params, _ = trained
        assert mean_squared_error(params, cache) < 0.1 * mean_squared_error(init_params(cache, config), cache)

    def test_step_count(self, trained):
        """Tests that 100 epochs of 20 batches make 2000 steps."""
        assert trained[3]["step"].iloc[-1] == 2000

    def test_decoder_columns_unit_norm(self, trained):
        """Tests that decoder columns have unit norm after training."""
        assert np.max(np.abs(np.linalg.norm(trained[2].w_dec, axis=0) - 1)) < 1e-9

    def test_log_columns(self, trained):
        """Tests that the log has one row per epoch plus the initialization."""
        log = trained[3]
        assert list(log.columns) == ["epoch", "step", "loss", "mse", "aux_loss", "fvu", "dead_fraction"]
        assert len(log) == 101
        assert log["fvu"].iloc[-1] < log["fvu"].iloc[0]

    def test_held_out_variance_explained(self, trained, held_out):
        """Tests that the autoencoder explains over half the variance of vectors it never saw."""
        assert fraction_of_variance_unexplained(trained[2], held_out) < 0.5

    def test_deterministic(self, trained):
        """Tests that retraining with the same seed gives identical weights."""
        cache, config, params, _ = trained
        again, _ = train_sae(cache, config)
        assert np.array_equal(again.w_enc, params.w_enc)


def test_aux_loss_revives_latents(make_cache):
    """Tests that the auxiliary loss leaves fewer dead latents than training without it."""
    vectors = np.random.default_rng(9).normal(size=(600, 8))
    cache = make_cache(vectors)
    base = SaeConfig(h=64, k=1, k_aux=16, lr=1e-2, batch_size=20, epochs=20, dead_threshold=200, seed=3)
    _, with_aux = train_sae(cache, base.model_copy(update={"alpha_aux": 1.0}))
    _, without_aux = train_sae(cache, base.model_copy(update={"alpha_aux": 0.0}))
    late = slice(10, None)
    revived = with_aux["dead_fraction"].iloc[late].mean()
    stranded = without_aux["dead_fraction"].iloc[late].mean()
    assert stranded > 0
    assert revived < stranded
