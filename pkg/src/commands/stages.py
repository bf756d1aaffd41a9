"""The pipeline stage commands: gen-corpus, train-lm, harvest, probe, train-sae, rank, eval and run."""

from pathlib import Path
from typing import Annotated

import typer
from pydantic import ValidationError

from src.pipeline.config import STAGES, RunConfig, load_config
from src.pipeline.stages import TABLE_FILE, StageOutcome, run_stage

ConfigOption = Annotated[Path | None, typer.Option("--config", help="Run configuration TOML file")]
SeedOption = Annotated[int | None, typer.Option(help="Override the run seed")]
StageDirOption = Annotated[Path | None, typer.Option(help="Override the stage directory")]
ForceOption = Annotated[bool, typer.Option(help="Overwrite outputs of an earlier run of the stage")]
VerboseOption = Annotated[bool, typer.Option(help="Print the training log or result table")]

# Domain errors subclass these; anything else is a bug and keeps its traceback.
PIPELINE_ERRORS = (ValueError, KeyError, RuntimeError, OSError)


def resolve_config(config: Path | None, seed: int | None, stage_dir: Path | None) -> RunConfig:
    """Loads the run configuration and applies the overrides.

    Raises:
        typer.BadParameter: If the file is missing, unreadable or invalid.
    """
    try:
        return load_config(config, seed=seed, stage_dir=stage_dir)
    except ValidationError as e:
        raise typer.BadParameter(str(e), param_hint="--config") from e


def execute(
    stage: str,
    config: Path | None,
    seed: int | None,
    stage_dir: Path | None,
    *,
    force: bool,
    verbose: bool,
) -> StageOutcome:
    """Runs one stage and reports it.

    Raises:
        typer.Exit: With code 1 if the stage fails.
    """
    run_config = resolve_config(config, seed, stage_dir)
    typer.echo(f"\n{stage}: {run_config.stage_dir()}")
    try:
        outcome = run_stage(stage, run_config, force=force)
    except PIPELINE_ERRORS as e:
        typer.echo(f"Error in {stage}: {e}")
        raise typer.Exit(code=1) from e
    report(outcome, verbose=verbose)
    return outcome


def report(outcome: StageOutcome, *, verbose: bool = False) -> None:
    """Displays the headline values of a stage and, if verbose, its log."""
    typer.echo(f"{'Result':<24} | {'Value':<16}")
    typer.echo("-" * 43)
    for name, value in outcome.summary.items():
        shown = f"{value:.4f}" if isinstance(value, float) else str(value)
        typer.echo(f"{name:<24} : {shown}")
    typer.echo(f"{len(outcome.paths)} files written")
    if verbose and outcome.log is not None:
        typer.echo()
        typer.echo(outcome.log.to_string(index=False))


def gen_corpus(
    config: ConfigOption = None,
    seed: SeedOption = None,
    stage_dir: StageDirOption = None,
    *,
    force: ForceOption = False,
    verbose: VerboseOption = False,
) -> None:
    """Generates the synthetic corpus, the experiment datasets and the tokenizer."""
    execute("gen-corpus", config, seed, stage_dir, force=force, verbose=verbose)


def train_lm(
    config: ConfigOption = None,
    seed: SeedOption = None,
    stage_dir: StageDirOption = None,
    *,
    force: ForceOption = False,
    verbose: VerboseOption = False,
) -> None:
    """Trains the language model on the training corpus."""
    execute("train-lm", config, seed, stage_dir, force=force, verbose=verbose)


def harvest(
    config: ConfigOption = None,
    seed: SeedOption = None,
    stage_dir: StageDirOption = None,
    *,
    force: ForceOption = False,
    verbose: VerboseOption = False,
) -> None:
    """Records the probing documents' residual stream at every layer."""
    execute("harvest", config, seed, stage_dir, force=force, verbose=verbose)


def probe(
    config: ConfigOption = None,
    seed: SeedOption = None,
    stage_dir: StageDirOption = None,
    *,
    force: ForceOption = False,
    verbose: VerboseOption = False,
) -> None:
    """Trains a PII probe per layer and selects the intervention layer."""
    execute("probe", config, seed, stage_dir, force=force, verbose=verbose)


def train_sae(
    config: ConfigOption = None,
    seed: SeedOption = None,
    stage_dir: StageDirOption = None,
    *,
    force: ForceOption = False,
    verbose: VerboseOption = False,
) -> None:
    """Trains the sparse autoencoder at the selected layer (and any extra layers)."""
    execute("train-sae", config, seed, stage_dir, force=force, verbose=verbose)


def rank(
    config: ConfigOption = None,
    seed: SeedOption = None,
    stage_dir: StageDirOption = None,
    *,
    force: ForceOption = False,
    verbose: VerboseOption = False,
) -> None:
    """Ranks SAE latents and residual neurons by their response to email tokens."""
    execute("rank", config, seed, stage_dir, force=force, verbose=verbose)


def evaluate(
    config: ConfigOption = None,
    seed: SeedOption = None,
    stage_dir: StageDirOption = None,
    *,
    force: ForceOption = False,
    verbose: VerboseOption = False,
) -> None:
    """Measures leakage and utility for every cell of the defense grid."""
    outcome = execute("eval", config, seed, stage_dir, force=force, verbose=False)
    table = next(path for path in outcome.paths if path.name == TABLE_FILE)
    typer.echo()
    typer.echo(table.read_text(encoding="utf-8"))
    if verbose and outcome.log is not None:
        typer.echo(outcome.log.to_string(index=False))


def run(
    config: ConfigOption = None,
    seed: SeedOption = None,
    stage_dir: StageDirOption = None,
    *,
    force: ForceOption = False,
    verbose: VerboseOption = False,
) -> None:
    """Runs every stage in order, from gen-corpus to eval."""
    for stage in STAGES:
        execute(stage, config, seed, stage_dir, force=force, verbose=verbose)
