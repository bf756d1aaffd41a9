"""Testing fixtures."""

import pytest

from src.corpus.split import CorpusConfig
from src.eval.grid import EvalConfig
from src.intervene.interventions import InterventionSpec, Method
from src.lm.model import LmConfig
from src.lm.training import LmTrainConfig
from src.pipeline.config import RunConfig
from src.pipeline.stages import run_all
from src.probe.probe import ProbeConfig
from src.sae.sae import SaeConfig


def tiny_config(directory, seed=0):
    """A run small enough to go through every stage in seconds."""
    grid = [
        InterventionSpec(use_sae=True),
        InterventionSpec(use_sae=False),
        InterventionSpec(method=Method.ABLATION, k=2, use_sae=True),
        InterventionSpec(method=Method.ABLATION, k=2, use_sae=False),
        InterventionSpec(method=Method.STEER_MEAN_DIFF, alpha=-4.0, use_sae=True),
        InterventionSpec(method=Method.STEER_MEAN_DIFF, alpha=-4.0, use_sae=False),
    ]
    return RunConfig(
        seed=seed,
        output_dir=directory,
        corpus=CorpusConfig(n_subjects=20, n_docs=200, pii_fraction=0.2),
        lm=LmConfig(d_emb=8, n_layers=2, n_heads=2),
        lm_train=LmTrainConfig(epochs=1, batch_size=32),
        probe=ProbeConfig(max_epochs=20),
        sae=SaeConfig(h=16, k=4, k_aux=4, dead_threshold=200, batch_size=128, epochs=1),
        eval=EvalConfig(grid=grid, max_new=2, data_fractions=[1.0, 0.5]),
    )


@pytest.fixture
def make_config():
    """Fixture for the tiny run configuration: make_config(directory, seed=0)."""
    return tiny_config


@pytest.fixture(scope="module")
def completed_run(tmp_path_factory):
    """Fixture for a tiny run taken through every stage."""
    config = tiny_config(tmp_path_factory.mktemp("run"))
    outcomes = run_all(config)
    return config, outcomes
