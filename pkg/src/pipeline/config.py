"""Run configuration: one TOML file with a section per pipeline concern."""

from pathlib import Path

import toml
import typer
from pydantic import BaseModel, ConfigDict, Field

from src import get_config_path, get_output_root
from src.corpus.split import CorpusConfig
from src.eval.grid import EvalConfig
from src.lm.model import LmConfig
from src.lm.training import LmTrainConfig
from src.probe.probe import ProbeConfig
from src.sae.sae import SaeConfig
from src.utils.hashing import sha256_json

STAGES = ("gen-corpus", "train-lm", "harvest", "probe", "train-sae", "rank", "eval")

# Config sections each stage reads, beyond those of the stages before it.
STAGE_SECTIONS = {
    "gen-corpus": ("seed", "corpus"),
    "train-lm": ("lm", "lm_train"),
    "harvest": (),
    "probe": ("probe",),
    "train-sae": ("sae",),
    "rank": (),
    "eval": ("eval",),
}


class RunConfig(BaseModel):
    """Everything a pipeline run depends on.

    The `seed` fields of the lm, lm_train and sae sections are offsets added
    to the run seed, so one `--seed` moves every random stream of the run.

    Attributes:
        seed (int): Run seed.
        output_dir (Path | None): Stage directory; defaults to `<output root>/seed-<seed>`.
        corpus (CorpusConfig): Corpus and split sizes.
        lm (LmConfig): Language model architecture; the vocabulary size is filled in from the tokenizer.
        lm_train (LmTrainConfig): Language model optimization.
        probe (ProbeConfig): Layer-selection and steering probes.
        sae (SaeConfig): Sparse autoencoder shape and training.
        eval (EvalConfig): Defense grid and evaluation settings.
    """

    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    output_dir: Path | None = None
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    lm: LmConfig = Field(default_factory=LmConfig)
    lm_train: LmTrainConfig = Field(default_factory=LmTrainConfig)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    sae: SaeConfig = Field(default_factory=SaeConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    def stage_dir(self) -> Path:
        """Where the stages of this run read and write their artifacts."""
        if self.output_dir is not None:
            return self.output_dir
        return get_output_root() / f"seed-{self.seed}"

    def lm_config(self, vocab_size: int) -> LmConfig:
        """Architecture with the tokenizer's vocabulary and the run's init seed."""
        return self.lm.model_copy(update={"vocab_size": vocab_size, "seed": self.seed + self.lm.seed})

    def lm_train_config(self) -> LmTrainConfig:
        """Optimization settings with the run's batch-order seed."""
        return self.lm_train.model_copy(update={"seed": self.seed + self.lm_train.seed})

    def sae_config(self) -> SaeConfig:
        """Autoencoder settings with the run's init and batch-order seed."""
        return self.sae.model_copy(update={"seed": self.seed + self.sae.seed})

    def to_toml(self) -> str:
        """The configuration as TOML; unset optional values are omitted."""
        return toml.dumps(self.model_dump(mode="json", exclude_none=True))


def load_config(
    user_path: Path | None = None,
    seed: int | None = None,
    stage_dir: Path | None = None,
) -> RunConfig:
    """Reads the run configuration and applies command-line overrides.

    Without `user_path`, the application-directory config is read if it
    exists, otherwise the built-in defaults are used.

    Args:
        user_path (Path | None): TOML file named with `--config`.
        seed (int | None): `--seed` override.
        stage_dir (Path | None): `--stage-dir` override.

    Raises:
        typer.BadParameter: If `user_path` does not exist or is not valid TOML.
        pydantic.ValidationError: If a section is invalid.
    """
    path = get_config_path(user_path)
    if user_path is not None and not path.is_file():
        raise typer.BadParameter(f"config file {path} does not exist")
    data = {}
    if path.is_file():
        try:
            data = toml.load(path)
        except toml.TomlDecodeError as e:
            raise typer.BadParameter(f"config file {path} is not valid TOML: {e}") from e
    config = RunConfig.model_validate(data)
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if stage_dir is not None:
        updates["output_dir"] = stage_dir
    return config.model_copy(update=updates)


def stage_hash(config: RunConfig, stage: str) -> str:
    """Fingerprint of every config section `stage` and the stages before it read.

    Raises:
        KeyError: If `stage` is not a pipeline stage.
    """
    index = STAGES.index(stage) if stage in STAGES else None
    if index is None:
        raise KeyError(f"unknown stage {stage!r}")
    dump = config.model_dump(mode="json")
    sections = [name for upstream in STAGES[: index + 1] for name in STAGE_SECTIONS[upstream]]
    return sha256_json({"stage": stage, **{name: dump[name] for name in sections}})
