"""Where leakguard looks for its configuration and puts its runs.

`get_config_path` resolves the run configuration file: a `--config` path, or
`config.toml` in the user's application directory. `get_output_root` resolves
the directory under which each seed's stage directory is created.
"""

import os
from pathlib import Path

import typer

app_name = "leakguard"

OUTPUT_ROOT_ENV = "LEAKGUARD_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = Path("runs")


def get_config_path(user_path: Path | None = None) -> Path:
    """Return the location of the run configuration file.

    Args:
        user_path (Path, optional): File named with `--config`. Defaults to None,
            meaning `config.toml` in the leakguard application directory.

    Returns:
        Path: The configuration file, which need not exist.
    """
    return user_path or Path(typer.get_app_dir(app_name)) / "config.toml"


def get_output_root() -> Path:
    """Return the root of the run directories: `$LEAKGUARD_OUTPUT_ROOT`, else `./runs`."""
    return Path(os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT))
