"""Testing fixtures."""

import numpy as np
import pytest

from src.corpus.split import CorpusConfig, build_split
from src.eval.grid import EvalConfig
from src.eval.report import EvalReport
from src.intervene.interventions import InterventionSpec, Method
from src.lm.model import LmConfig, LmModel
from src.probe.probe import ProbeConfig
from src.sae.sae import SaeParams


@pytest.fixture(scope="module")
def world():
    """Fixture for a small split, its tokenizer and an untrained two-block model."""
    split, tokenizer = build_split(CorpusConfig(n_subjects=20, n_docs=200, pii_fraction=0.2), seed=3)
    model = LmModel(LmConfig(vocab_size=tokenizer.vocab_size, d_emb=8, n_layers=2, n_heads=2, seed=0))
    return split, tokenizer, model


@pytest.fixture(scope="module")
def grid_sae():
    """Fixture for a random autoencoder at layer 1 with d_emb 8, h 16 and k 4."""
    rng = np.random.default_rng(5)
    w_dec = rng.normal(size=(8, 16))
    return SaeParams(
        w_enc=rng.normal(size=(16, 8)),
        w_dec=w_dec / np.linalg.norm(w_dec, axis=0),
        b_pre=np.zeros(8),
        k=4,
        k_aux=4,
        alpha_aux=0.0,
        layer=1,
    )


@pytest.fixture
def small_eval():
    """Fixture for a seven-cell grid evaluated with four generated tokens."""
    grid = [
        InterventionSpec(use_sae=True),
        InterventionSpec(use_sae=False),
        InterventionSpec(method=Method.ABLATION, k=4, use_sae=True),
        InterventionSpec(method=Method.ABLATION, k=4, use_sae=False),
        InterventionSpec(method=Method.STEER_PROBE, alpha=-4.0, use_sae=True),
        InterventionSpec(method=Method.STEER_PROBE, alpha=-4.0, use_sae=False),
        InterventionSpec(method=Method.STEER_MEAN_DIFF, alpha=-4.0, use_sae=False),
    ]
    return EvalConfig(grid=grid, max_new=4, data_fractions=[1.0])


@pytest.fixture
def probe_config():
    """Fixture for a short probe optimization."""
    return ProbeConfig(max_epochs=30)


def _row(method, k, alpha, use_sae, leak, utility, fraction=1.0):
    return {
        "method": method,
        "k": k,
        "alpha": alpha,
        "use_sae": use_sae,
        "data_fraction": fraction,
        "layer": 1,
        "n_prompts": 100,
        "n_leaked": round(leak),
        "leak_rate": leak,
        "heldout_ppl": 10.0,
        "cloze_acc": utility,
        "avg_utility": utility,
        "vector_norm": None if method in {"none", "ablation"} else 1.0,
    }


@pytest.fixture
def make_row():
    """Fixture for a row builder: make_row(method, k, alpha, use_sae, leak, utility, fraction=1.0)."""
    return _row


@pytest.fixture
def good_report():
    """Fixture for a report that passes every acceptance check."""
    rows = [
        _row("none", None, None, True, 40.0, 80.0),
        _row("none", None, None, False, 41.0, 80.0),
    ]
    for use_sae, leaks in ((True, (20.0, 3.0, 0.0)), (False, (30.0, 10.0, 1.0))):
        rows += [_row("ablation", k, None, use_sae, leak, 78.0) for k, leak in zip((4, 16, 48), leaks, strict=True)]
    for use_sae, leaks, utility in ((True, (10.0, 2.0, 0.5), 76.0), (False, (20.0, 5.0, 1.0), 60.0)):
        rows += [
            _row("steer_probe", None, alpha, use_sae, leak, utility)
            for alpha, leak in zip((-2.0, -4.0, -8.0), leaks, strict=True)
        ]
    rows += [
        _row("ablation", k, None, use_sae, leak, 78.0, fraction=0.01)
        for use_sae, leaks in ((True, (21.0, 4.0, 1.0)), (False, (31.0, 11.0, 2.0)))
        for k, leak in zip((4, 16, 48), leaks, strict=True)
    ]
    return EvalReport.from_rows(rows)
