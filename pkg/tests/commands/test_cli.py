"""Tests for the CLI commands."""

import pytest
from typer.testing import CliRunner

from src.cli import app
from src.eval.report import EvalReport

runner = CliRunner()

TINY_TOML = """
seed = 0

[corpus]
n_subjects = 20
n_docs = 200

[lm]
d_emb = 8
n_layers = 2
n_heads = 2
"""


@pytest.fixture
def tiny_toml(tmp_path):
    """Fixture for a config file describing a small corpus."""
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_TOML)
    return path


@pytest.fixture
def records_dir(tmp_path):
    """Fixture for a stage directory holding a small records file."""
    rows = []
    for use_sae, base in ((True, 30.0), (False, 31.0)):
        rows.append({"method": "none", "use_sae": use_sae, "leak_rate": base, "avg_utility": 50.0})
        rows += [
            {"method": "ablation", "k": k, "use_sae": use_sae, "leak_rate": leak, "avg_utility": 48.0}
            for k, leak in ((4, 10.0), (16, 1.0))
        ]
    for row in rows:
        row.update(data_fraction=1.0, layer=1, n_prompts=100, n_leaked=round(row["leak_rate"]))
        row.update(heldout_ppl=9.0, cloze_acc=row["avg_utility"])
    directory = tmp_path / "seed-0"
    EvalReport.from_rows(rows).write_csv(directory / "records.csv")
    return directory


def test_help_lists_commands():
    """Tests that the help text lists every pipeline command."""
    result = runner.invoke(app, ["--help"])
    assert result.exit_code == 0
    for command in ("gen-corpus", "train-lm", "harvest", "probe", "train-sae", "rank", "eval", "run", "report"):
        assert command in result.output


def test_missing_config_is_usage_error(tmp_path):
    """Tests that a --config file that does not exist exits with a usage error."""
    result = runner.invoke(app, ["gen-corpus", "--config", str(tmp_path / "absent.toml")])
    assert result.exit_code == 2


def test_gen_corpus_then_refuse(tiny_toml, tmp_path):
    """Tests that gen-corpus writes its outputs, refuses to overwrite, and overwrites with --force."""
    stage_dir = tmp_path / "run"
    first = runner.invoke(app, ["gen-corpus", "--config", str(tiny_toml), "--stage-dir", str(stage_dir)])
    assert first.exit_code == 0
    assert (stage_dir / "vocab.json").exists()
    assert "files written" in first.output

    second = runner.invoke(app, ["gen-corpus", "--config", str(tiny_toml), "--stage-dir", str(stage_dir)])
    assert second.exit_code == 1
    assert "--force" in second.output

    forced = runner.invoke(app, ["gen-corpus", "--config", str(tiny_toml), "--stage-dir", str(stage_dir), "--force"])
    assert forced.exit_code == 0


def test_stale_stage_exits(tiny_toml, tmp_path):
    """Tests that running a stage before its upstream names the stage to run."""
    result = runner.invoke(app, ["train-lm", "--config", str(tiny_toml), "--stage-dir", str(tmp_path / "empty")])
    assert result.exit_code == 1
    assert "gen-corpus" in result.output


def test_report(records_dir, tiny_toml, tmp_path):
    """Tests that report prints the comparison table and the acceptance checks, and writes plots."""
    result = runner.invoke(
        app,
        ["report", str(records_dir), "--config", str(tiny_toml), "--plots", str(tmp_path / "plots")],
    )
    assert result.exit_code == 0
    assert "Median of 1 run(s)" in result.output
    assert "memorization" in result.output
    assert (tmp_path / "plots" / "leakage_ablation.png").exists()


def test_report_strict(records_dir, tiny_toml):
    """Tests that --strict turns a failed check into exit code 1."""
    result = runner.invoke(app, ["report", str(records_dir), "--config", str(tiny_toml), "--strict"])
    assert result.exit_code == 1
    assert "data_size" in result.output


def test_report_without_records(tmp_path, tiny_toml):
    """Tests that reporting on a directory without records fails cleanly."""
    result = runner.invoke(app, ["report", str(tmp_path), "--config", str(tiny_toml)])
    assert result.exit_code == 1
    assert "run `eval` first" in result.output
