"""Tests for config.py."""

from pathlib import Path

import pytest
import typer

from src import OUTPUT_ROOT_ENV
from src.pipeline.config import STAGES, RunConfig, load_config, stage_hash
from src.sae.sae import SaeConfig

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


class TestStageHash:
    def test_downstream_edits_keep_upstream_hashes(self):
        """Tests that an SAE edit leaves the LM fingerprint alone but changes the SAE and eval ones."""
        base = RunConfig()
        edited = base.model_copy(update={"sae": SaeConfig(h=256, k=16, k_aux=16)})
        for stage in ("gen-corpus", "train-lm", "harvest", "probe"):
            assert stage_hash(base, stage) == stage_hash(edited, stage)
        for stage in ("train-sae", "rank", "eval"):
            assert stage_hash(base, stage) != stage_hash(edited, stage)

    def test_seed_changes_everything(self):
        """Tests that the run seed is part of every stage's fingerprint."""
        base, other = RunConfig(), RunConfig(seed=1)
        assert all(stage_hash(base, stage) != stage_hash(other, stage) for stage in STAGES)

    def test_stages_differ(self):
        """Tests that stages reading the same sections still get distinct fingerprints."""
        config = RunConfig()
        assert stage_hash(config, "train-lm") != stage_hash(config, "harvest")

    def test_unknown_stage(self):
        """Tests that an unknown stage name is rejected."""
        with pytest.raises(KeyError):
            stage_hash(RunConfig(), "deploy")


class TestLoadConfig:
    def test_desk_file_matches_defaults(self):
        """Tests that the shipped desk configuration is the built-in default."""
        assert load_config(CONFIGS / "desk.toml") == RunConfig()

    def test_smoke_file_is_valid(self):
        """Tests that the smoke configuration parses and keeps both no-defense cells."""
        config = load_config(CONFIGS / "smoke.toml")
        assert {spec.use_sae for spec in config.eval.grid if spec.method == "none"} == {True, False}

    def test_missing_file(self, tmp_path):
        """Tests that a --config path that does not exist is a usage error."""
        with pytest.raises(typer.BadParameter):
            load_config(tmp_path / "absent.toml")

    def test_invalid_toml(self, tmp_path):
        """Tests that a malformed file is a usage error."""
        path = tmp_path / "bad.toml"
        path.write_text("seed = = 3\n")
        with pytest.raises(typer.BadParameter):
            load_config(path)

    def test_unknown_key(self, tmp_path):
        """Tests that misspelled settings are rejected."""
        path = tmp_path / "typo.toml"
        path.write_text("[sae]\nwidth = 12\n")
        with pytest.raises(ValueError):
            load_config(path)

    def test_overrides(self, tmp_path):
        """Tests that --seed and --stage-dir replace the file's values."""
        path = tmp_path / "run.toml"
        path.write_text("seed = 4\n[corpus]\nn_docs = 500\n")
        config = load_config(path, seed=9, stage_dir=tmp_path / "out")
        assert config.seed == 9
        assert config.corpus.n_docs == 500
        assert config.stage_dir() == tmp_path / "out"

    def test_toml_round_trip(self, tmp_path):
        """Tests that a written configuration reads back unchanged."""
        config = RunConfig(seed=3, output_dir=tmp_path)
        path = tmp_path / "config.toml"
        path.write_text(config.to_toml())
        assert load_config(path) == config


def test_default_stage_dir(monkeypatch, tmp_path):
    """Tests that the stage directory defaults to seed-<seed> under the output root."""
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert RunConfig(seed=2).stage_dir() == tmp_path / "seed-2"
    monkeypatch.delenv(OUTPUT_ROOT_ENV)
    assert RunConfig().stage_dir() == Path("runs") / "seed-0"


def test_component_seeds_follow_run_seed():
    """Tests that component seeds are offsets from the run seed."""
    config = RunConfig(seed=5)
    assert config.lm_config(vocab_size=30).seed == 5
    assert config.lm_config(vocab_size=30).vocab_size == 30
    assert config.lm_train_config().seed == 5
    assert config.sae_config().seed == 5
