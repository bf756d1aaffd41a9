"""Tests for probe.py."""

import numpy as np
import pytest

from src.errors import DataError, DegenerateProbeError, ParameterError
from src.lm.model import LmConfig, LmModel
from src.probe.probe import (
    ProbeConfig,
    ProbeModel,
    ProbeSpace,
    probe_all_layers,
    probe_direction,
    probe_layer_features,
    train_probe,
)


class TestTrainProbe:
    """Fitting a single probe."""

    def test_separable(self, separable):
        """Tests that two separated clusters are classified perfectly."""
        features, labels = separable
        result = train_probe(features, labels, split_seed=0)
        assert result.val_acc == 100.0

    def test_chance_level(self):
        """Tests that random labels give roughly chance accuracy."""
        rng = np.random.default_rng(5)
        features = rng.normal(size=(5000, 5))
        labels = rng.permutation(np.arange(5000) % 2 == 0)
        result = train_probe(features, labels, split_seed=1)
        assert 45.0 <= result.val_acc <= 55.0

    def test_single_class(self, separable):
        """Tests that one-class data raises a DataError."""
        features, _ = separable
        with pytest.raises(DataError):
            train_probe(features, np.ones(len(features), dtype=bool), split_seed=0)

    def test_early_stopping(self, separable):
        """Tests that training stops before the epoch limit once validation loss stalls."""
        features, labels = separable
        result = train_probe(features, labels, split_seed=0, config=ProbeConfig(max_epochs=5000, patience=3))
        assert result.epochs < 5000

    def test_deterministic(self, separable):
        """Tests that the same split seed gives the same weights."""
        features, labels = separable
        first = train_probe(features, labels, split_seed=4).model
        second = train_probe(features, labels, split_seed=4).model
        assert np.array_equal(first.theta, second.theta)

    def test_topk_reads_selected_columns(self):
        """Tests that a latent_topk probe uses only the listed columns."""
        rng = np.random.default_rng(2)
        labels = rng.permutation(np.arange(300) % 2 == 0)
        features = rng.normal(size=(300, 6))
        features[:, 4] += np.where(labels, 3.0, -3.0)
        result = train_probe(features, labels, 0, space=ProbeSpace.LATENT_TOPK, indices=[1, 4])
        assert result.model.theta.shape == (2,)
        assert result.model.indices == (1, 4)
        assert result.val_acc > 90.0
        assert np.array_equal(result.model.logits(features), features[:, [1, 4]] @ result.model.theta + result.model.bias)


class TestProbeModel:
    """The probe record."""

    def test_unsorted_indices(self):
        """Tests that latent_topk indices must be ascending."""
        with pytest.raises(ParameterError):
            ProbeModel(theta=np.ones(2), bias=0.0, space=ProbeSpace.LATENT_TOPK, indices=(3, 1))

    def test_non_finite(self):
        """Tests that NaN weights are rejected."""
        with pytest.raises(ParameterError):
            ProbeModel(theta=np.array([np.nan]), bias=0.0)

    def test_decision_scale_invariant(self):
        """Tests that scaling weights and bias by a positive factor keeps every decision."""
        rng = np.random.default_rng(8)
        features = rng.normal(size=(500, 4))
        probe = ProbeModel(theta=rng.normal(size=4), bias=0.3)
        scaled = ProbeModel(theta=probe.theta * 7.5, bias=probe.bias * 7.5)
        assert np.array_equal(probe.predict(features), scaled.predict(features))


class TestProbeDirection:
    """Unit-norm steering directions from probes."""

    def test_example(self):
        """Tests that [3, 4] becomes [0.6, 0.8]."""
        direction = probe_direction(ProbeModel(theta=np.array([3.0, 4.0]), bias=1.0))
        assert np.allclose(direction, [0.6, 0.8], atol=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_unit_norm(self, seed):
        """Tests that the direction of a random probe has norm one."""
        theta = np.random.default_rng(seed).normal(size=16)
        assert abs(np.linalg.norm(probe_direction(ProbeModel(theta=theta, bias=0.0))) - 1) < 1e-12

    def test_scale_invariant(self):
        """Tests that rescaling theta by a positive factor leaves the direction unchanged."""
        theta = np.array([1.0, -2.0, 0.5])
        first = probe_direction(ProbeModel(theta=theta, bias=0.0))
        second = probe_direction(ProbeModel(theta=theta * 13.0, bias=0.0))
        assert np.allclose(first, second, atol=1e-15)

    def test_zero(self):
        """Tests that a zero weight vector raises a DegenerateProbeError."""
        with pytest.raises(DegenerateProbeError):
            probe_direction(ProbeModel(theta=np.zeros(3), bias=0.0))


class TestLayerSelection:
    """Choosing the intervention layer."""

    @pytest.mark.parametrize("seed", range(10))
    def test_planted_signal(self, planted, seed):
        """Tests that the only informative layer is selected."""
        features, labels = planted(seed)
        assert probe_layer_features(features, labels, split_seed=seed).selected_layer == 2

    def test_identical_layers_pick_lowest(self, planted):
        """Tests that identical layers resolve to layer 0."""
        features, labels = planted(0)
        same = {layer: features[2] for layer in range(4)}
        assert probe_layer_features(same, labels, split_seed=0).selected_layer == 0

    def test_threads_match_serial(self, planted):
        """Tests that concurrent layer training gives the serial result."""
        features, labels = planted(1)
        serial = probe_layer_features(features, labels, split_seed=1).to_frame()
        threaded = probe_layer_features(features, labels, split_seed=1, max_workers=4).to_frame()
        assert serial.equals(threaded)

    def test_report_frame(self, planted):
        """Tests that the report has one row per layer with accuracies in [0, 100]."""
        features, labels = planted(2)
        frame = probe_layer_features(features, labels, split_seed=2).to_frame()
        assert frame["block"].tolist() == [0, 1, 2, 3]
        assert frame["val_acc"].between(0, 100).all()


def test_probe_all_layers_runs_on_model():
    """Tests that every layer of a model is probed from its documents."""
    model = LmModel(LmConfig(vocab_size=10, d_emb=8, n_layers=3, n_heads=2, seed=0))
    docs = [(i, [1 + i % 9, 2, 3 + (i * 7) % 7]) for i in range(20)]
    labels = [i % 2 == 0 for i in range(20)]
    report = probe_all_layers(model, docs, labels, split_seed=0)
    assert sorted(report.results) == [0, 1, 2]
    assert report.selected_layer in {0, 1, 2}
