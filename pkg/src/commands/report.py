"""The report command."""

from pathlib import Path
from typing import Annotated

import pandas as pd
import typer

from src.commands.stages import PIPELINE_ERRORS, ConfigOption, SeedOption, StageDirOption, resolve_config
from src.eval.report import CheckResult, EvalReport, acceptance_checks, aggregate_seeds, plot_curves
from src.pipeline.stages import PASSTHROUGH_FILE, collect_reports


def report(
    runs: Annotated[
        list[Path] | None,
        typer.Argument(help="Stage directories or records files, one per seed; default: the configured stage directory"),
    ] = None,
    config: ConfigOption = None,
    seed: SeedOption = None,
    stage_dir: StageDirOption = None,
    plots: Annotated[Path | None, typer.Option(help="Directory to write leakage curves to")] = None,
    *,
    strict: Annotated[bool, typer.Option(help="Exit with code 1 if an acceptance check fails")] = False,
) -> None:
    """Prints the defense comparison table (median over runs) and the acceptance checks.

    Parameters:
        runs (list[Path] | None): Stage directories or records files.
        config (Path | None): Run configuration, for the default directory and tolerances.
        seed (int | None): Seed override, for the default directory.
        stage_dir (Path | None): Stage directory override.
        plots (Path | None): If given, PNG leakage curves are written there.
        strict (bool): Treat failed acceptance checks as an error.
    """
    run_config = resolve_config(config, seed, stage_dir)
    paths = runs or [run_config.stage_dir()]
    try:
        merged = aggregate_seeds(collect_reports(paths))
        results = acceptance_checks(merged, run_config.eval.passthrough_tolerance)
    except PIPELINE_ERRORS as e:
        typer.echo(f"Error reading reports: {e}")
        raise typer.Exit(code=1) from e

    show_tables(merged, len(paths))
    show_passthrough([path for path in paths if path.is_dir()])
    show_checks(results)
    if plots is not None:
        for path in plot_curves(merged, plots):
            typer.echo(f"Plot written to {path}")
    if strict and any(result.status == "fail" for result in results):
        raise typer.Exit(code=1)


def show_tables(merged: EvalReport, n_runs: int) -> None:
    """One comparison table per data fraction, full data first."""
    fractions = sorted(set(merged.records["data_fraction"]), reverse=True)
    for fraction in fractions:
        typer.echo(f"\nMedian of {n_runs} run(s), data fraction {fraction:g}, utility = cloze accuracy (%)")
        typer.echo(merged.table(fraction))


def show_passthrough(directories: list[Path]) -> None:
    """Leakage change from splicing each trained SAE in, per run."""
    frames = [
        pd.read_csv(directory / PASSTHROUGH_FILE).assign(run=directory.name)
        for directory in directories
        if (directory / PASSTHROUGH_FILE).exists()
    ]
    if not frames:
        return
    typer.echo()
    typer.echo(f"{'Run':<14} | {'Layer':>5} | {'Baseline':>8} | {'With SAE':>8} | {'Delta':>6}")
    typer.echo("-" * 55)
    for row in pd.concat(frames).itertuples(index=False):
        typer.echo(
            f"{row.run:<14} : {row.layer:>5} : {row.baseline_leak:>8.2f} : {row.passthrough_leak:>8.2f} : {row.delta:>+6.2f}",
        )


def show_checks(results: list[CheckResult]) -> None:
    """Acceptance check outcomes."""
    typer.echo()
    typer.echo(f"{'Check':<14} | {'Status':<10} | Detail")
    typer.echo("-" * 70)
    for result in results:
        typer.echo(f"{result.name:<14} : {result.status:<10} : {result.detail}")
