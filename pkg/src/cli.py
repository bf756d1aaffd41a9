"""This module serves as the entry point for the leakguard CLI application.

It defines a Typer application with one subcommand per pipeline stage plus
`run` and `report`. Use `--help` with any command to explore its options.
"""

import sys
from pathlib import Path

import typer

from src.commands import evaluate, gen_corpus, harvest, probe, rank, report, run, train_lm, train_sae

# Add the root project directory to sys.path so `python src/cli.py` works
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

app = typer.Typer(
    help="Measure and mitigate PII leakage with sparse autoencoder interventions. "
    "Type [COMMAND] --help for more info.",
)


@app.callback(invoke_without_command=True)
def main(ctx: typer.Context) -> None:
    """Show the help message if no command is provided.

    Args:
        ctx (typer.Context): Typer context object containing information about
                             the current CLI invocation and options.
    """
    if ctx.invoked_subcommand is None:
        typer.echo(ctx.get_help())
        raise typer.Exit()


app.command(name="gen-corpus")(gen_corpus)
app.command(name="train-lm")(train_lm)
app.command()(harvest)
app.command()(probe)
app.command(name="train-sae")(train_sae)
app.command()(rank)
app.command(name="eval")(evaluate)
app.command()(run)
app.command()(report)

if __name__ == "__main__":
    app()
