"""Tests for grid.py."""

import pandas as pd
import pytest

from src.errors import ConfigurationError
from src.eval.grid import (
    EvalConfig,
    build_toolkit,
    desk_grid,
    grid_cells,
    layer_passthrough,
    run_grid,
)
from src.eval.metrics import measure_leakage
from src.eval.report import RECORD_COLUMNS
from src.intervene.interventions import InterventionSpec, Method
from src.probe.probe import ProbeConfig


@pytest.fixture(scope="module")
def toolkit(world, grid_sae):
    """Fixture for defenses built at layer 1 from the full development data."""
    split, tokenizer, model = world
    specs = [
        InterventionSpec(method=Method.STEER_PROBE, alpha=-4.0, use_sae=True),
        InterventionSpec(method=Method.STEER_PROBE, alpha=-4.0, use_sae=False),
        InterventionSpec(method=Method.STEER_MEAN_DIFF, alpha=-4.0, use_sae=False),
    ]
    return build_toolkit(model, tokenizer, split, 1, grid_sae, specs, seed=0, probe_config=ProbeConfig(max_epochs=30))


class TestDeskGrid:
    def test_cell_counts(self):
        """Tests that the desk grid has 13 cells on each side of the SAE switch."""
        grid = desk_grid()
        assert len(grid) == 26
        assert sum(spec.use_sae for spec in grid) == 13
        assert sum(spec.method is Method.NONE for spec in grid) == 2
        assert sum(spec.method is Method.ABLATION for spec in grid) == 6

    def test_cells_with_subsampling(self):
        """Tests that the small data fraction re-runs only ablation and probe steering."""
        cells = grid_cells(EvalConfig())
        reduced = [spec for fraction, spec in cells if fraction != 1.0]
        assert len(cells) == 38
        assert {spec.method for spec in reduced} == {Method.ABLATION, Method.STEER_PROBE}

    def test_needs_both_baselines(self):
        """Tests that a grid without the no-defense SAE cell is rejected."""
        config = EvalConfig(grid=[InterventionSpec(use_sae=False)])
        with pytest.raises(ConfigurationError):
            grid_cells(config)


class TestBuildToolkit:
    def test_vectors_and_rankings(self, toolkit, grid_sae):
        """Tests that rankings cover every coordinate and each steering cell gets a vector."""
        assert len(toolkit.latent_ranking) == grid_sae.h
        assert len(toolkit.neuron_ranking) == grid_sae.d_emb
        assert toolkit.steering_vector(InterventionSpec(method=Method.STEER_PROBE, alpha=-2.0, use_sae=True)).v.shape == (
            grid_sae.h,
        )
        assert toolkit.steering_vector(
            InterventionSpec(method=Method.STEER_MEAN_DIFF, alpha=-8.0, use_sae=False)
        ).v.shape == (grid_sae.d_emb,)

    def test_without_sae(self, world, probe_config):
        """Tests that with-SAE vectors are skipped when no SAE is trained."""
        split, tokenizer, model = world
        specs = [InterventionSpec(method=Method.STEER_PROBE, alpha=-4.0, use_sae=use_sae) for use_sae in (True, False)]
        toolkit = build_toolkit(model, tokenizer, split, 1, None, specs, seed=0, probe_config=probe_config)
        assert toolkit.latent_ranking is None
        assert toolkit.steering_vector(specs[0]) is None
        assert toolkit.steering_vector(specs[1]) is not None
        with pytest.raises(ConfigurationError):
            toolkit.interventor(specs[0])


class TestRunGrid:
    def test_rows(self, world, toolkit, small_eval):
        """Tests that every cell yields one row with the record columns, in grid order."""
        split, tokenizer, model = world
        report = run_grid(model, tokenizer, split, {1.0: toolkit}, small_eval)
        assert list(report.records.columns) == RECORD_COLUMNS
        assert report.records["method"].tolist() == [str(spec.method) for spec in small_eval.grid]
        assert (report.records["n_prompts"] == len(split.d_adv)).all()

    def test_baseline_row(self, world, toolkit, small_eval):
        """Tests that the no-defense cell without SAE reports the unmodified model's leakage."""
        split, tokenizer, model = world
        records = run_grid(model, tokenizer, split, {1.0: toolkit}, small_eval).records
        baseline = records[(records["method"] == "none") & ~records["use_sae"]]
        assert baseline["leak_rate"].iloc[0] == measure_leakage(model, tokenizer, split.d_adv, max_new=4).rate

    def test_threads_match_serial(self, world, toolkit, small_eval):
        """Tests that concurrent evaluation gives the same rows as a serial run."""
        split, tokenizer, model = world
        serial = run_grid(model, tokenizer, split, {1.0: toolkit}, small_eval)
        threaded = run_grid(
            model, tokenizer, split, {1.0: toolkit}, small_eval.model_copy(update={"max_workers": 3})
        )
        pd.testing.assert_frame_equal(serial.records, threaded.records)

    def test_missing_fraction(self, world, toolkit, small_eval):
        """Tests that a data fraction without a toolkit fails before evaluation."""
        split, tokenizer, model = world
        config = small_eval.model_copy(update={"data_fractions": [1.0, 0.5]})
        with pytest.raises(ConfigurationError):
            run_grid(model, tokenizer, split, {1.0: toolkit}, config)


def test_layer_passthrough(world, grid_sae):
    """Tests that the pass-through frame compares each SAE layer with the baseline."""
    split, tokenizer, model = world
    frame = layer_passthrough(model, tokenizer, split.d_adv[:8], {1: grid_sae}, max_new=3)
    assert frame.columns.tolist() == ["layer", "baseline_leak", "passthrough_leak", "delta"]
    assert frame["layer"].tolist() == [1]
    row = frame.iloc[0]
    assert row["delta"] == pytest.approx(row["passthrough_leak"] - row["baseline_leak"])
