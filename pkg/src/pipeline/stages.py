"""Pipeline stages.

Every stage reads its inputs from the stage directory, checks them against
the manifest, writes its outputs next to them and records them in the
manifest. Stage directory layout:

    config.toml               resolved run configuration      gen-corpus
    vocab.json, data/*.tsv    tokenizer and datasets          gen-corpus
    lm.ckpt, lm_log.csv       language model                  train-lm
    acts/probe-<L>.actcache   probing activations per layer   harvest
    layers.csv, probe.json    per-layer probes, chosen layer  probe
    acts/sae-<L>.actcache     SAE training activations        train-sae
    sae-<L>.ckpt, sae-<L>_log.csv                             train-sae
    latent_ranking.csv, neuron_ranking.csv                    rank
    records.csv, table.txt, passthrough.csv                   eval
"""

import dataclasses
from collections.abc import Callable, Sequence
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from src.actcache.cache import harvest_layers, mean_pool, read_cache, write_cache
from src.corpus.io import read_split, write_split
from src.corpus.split import DatasetSplit, build_split
from src.corpus.tokenizer import Tokenizer
from src.errors import ArtifactExistsError, ConfigurationError, DataError
from src.eval.grid import build_toolkit, layer_passthrough, run_grid
from src.eval.report import EvalReport
from src.lm.model import load_model, save_model
from src.lm.training import train_lm
from src.pipeline.config import STAGES, RunConfig, stage_hash
from src.pipeline.manifest import Manifest, stage_lock
from src.probe.probe import probe_layer_features
from src.sae.ranking import FeatureRanking, rank_pii_features, rank_pii_neurons
from src.sae.sae import SaeParams, load_sae, save_sae
from src.sae.training import train_sae
from src.utils.hashing import sha256_file

CONFIG_FILE = "config.toml"
VOCAB_FILE = "vocab.json"
DATA_DIR = "data"
ACTS_DIR = "acts"
LM_FILE = "lm.ckpt"
LM_LOG_FILE = "lm_log.csv"
LAYERS_FILE = "layers.csv"
PROBE_FILE = "probe.json"
LATENT_RANKING_FILE = "latent_ranking.csv"
NEURON_RANKING_FILE = "neuron_ranking.csv"
RECORDS_FILE = "records.csv"
TABLE_FILE = "table.txt"
PASSTHROUGH_FILE = "passthrough.csv"

REQUIRES = {
    "gen-corpus": (),
    "train-lm": ("gen-corpus",),
    "harvest": ("gen-corpus", "train-lm"),
    "probe": ("gen-corpus", "train-lm", "harvest"),
    "train-sae": ("gen-corpus", "train-lm", "probe"),
    "rank": ("gen-corpus", "train-lm", "probe", "train-sae"),
    "eval": ("gen-corpus", "train-lm", "probe"),
}
# Checked only when they have run.
OPTIONAL = {"eval": ("train-sae", "rank")}


@dataclasses.dataclass
class StageOutcome:
    """What a stage produced.

    Attributes:
        stage (str): Stage name.
        paths (list[Path]): Files written.
        log (pd.DataFrame | None): Training log or result table, for verbose output.
        summary (dict): Headline values to report.
    """

    stage: str
    paths: list[Path]
    log: pd.DataFrame | None = None
    summary: dict[str, object] = dataclasses.field(default_factory=dict)


class ProbeSummary(BaseModel):
    """The layer chosen for intervention."""

    model_config = ConfigDict(extra="forbid")

    selected_layer: int
    val_acc: float


def probe_cache_path(directory: Path, layer: int) -> Path:
    """Probing activations of one layer."""
    return directory / ACTS_DIR / f"probe-{layer}.actcache"


def sae_cache_path(directory: Path, layer: int) -> Path:
    """SAE training activations of one layer."""
    return directory / ACTS_DIR / f"sae-{layer}.actcache"


def sae_path(directory: Path, layer: int) -> Path:
    """Autoencoder checkpoint of one layer."""
    return directory / f"sae-{layer}.ckpt"


# --Loading upstream artifacts-------------------------------------------------


def load_corpus(directory: Path) -> tuple[DatasetSplit, Tokenizer]:
    """The datasets and tokenizer written by gen-corpus."""
    return read_split(directory / DATA_DIR), Tokenizer.load(directory / VOCAB_FILE)


def load_selected_layer(directory: Path) -> int:
    """The layer chosen by the probe stage."""
    return ProbeSummary.model_validate_json((directory / PROBE_FILE).read_text(encoding="utf-8")).selected_layer


def trained_sae_layers(directory: Path) -> list[int]:
    """Layers with an autoencoder recorded by train-sae."""
    layers = []
    for path in Manifest(directory).current("train-sae"):
        name = Path(path).name
        if name.startswith("sae-") and name.endswith(".ckpt"):
            layers.append(int(name.removeprefix("sae-").removesuffix(".ckpt")))
    return sorted(layers)


def _tokenized(split: DatasetSplit, tokenizer: Tokenizer, doc_ids: Sequence[int]) -> list[tuple[int, list[int]]]:
    docs = split.docs_by_id()
    return [(doc_id, tokenizer.encode(docs[doc_id].text)) for doc_id in doc_ids]


# --Stages-------------------------------------------------------------------


def gen_corpus(config: RunConfig, directory: Path) -> StageOutcome:
    """Generates the corpus, derives the datasets and builds the tokenizer."""
    split, tokenizer = build_split(config.corpus, config.seed)
    paths = write_split(split, directory / DATA_DIR)
    tokenizer.save(directory / VOCAB_FILE)
    (directory / CONFIG_FILE).write_text(config.to_toml(), encoding="utf-8")
    return StageOutcome(
        stage="gen-corpus",
        paths=[directory / CONFIG_FILE, directory / VOCAB_FILE, *paths],
        summary={
            "documents": len(split.train_corpus) + len(split.heldout_docs),
            "adversarial prompts": len(split.d_adv),
            "vocabulary": tokenizer.vocab_size,
        },
    )


def train_language_model(config: RunConfig, directory: Path) -> StageOutcome:
    """Trains the language model on the training corpus."""
    split, tokenizer = load_corpus(directory)
    model, log = train_lm(
        config.lm_config(tokenizer.vocab_size),
        config.lm_train_config(),
        [tokenizer.encode(doc.text) for doc in split.train_corpus],
        [tokenizer.encode(doc.text) for doc in split.heldout_docs],
    )
    save_model(model, directory / LM_FILE)
    log.to_csv(directory / LM_LOG_FILE, index=False)
    return StageOutcome(
        stage="train-lm",
        paths=[directory / LM_FILE, directory / LM_LOG_FILE],
        log=log,
        summary={"held-out loss": float(log["heldout_loss"].iloc[-1])},
    )


def harvest_probe_activations(config: RunConfig, directory: Path) -> StageOutcome:
    """Records the probing documents' residual stream at every layer."""
    split, tokenizer = load_corpus(directory)
    model = load_model(directory / LM_FILE)
    docs = _tokenized(split, tokenizer, [example.doc_id for example in split.d_prob])
    caches = harvest_layers(model, docs, list(range(model.config.n_layers)))
    corpus_hash = stage_hash(config, "gen-corpus")
    model_hash = sha256_file(directory / LM_FILE)
    paths = []
    for layer, cache in caches.items():
        path = probe_cache_path(directory, layer)
        write_cache(dataclasses.replace(cache, corpus_hash=corpus_hash, model_hash=model_hash), path)
        paths.append(path)
    return StageOutcome(stage="harvest", paths=paths, summary={"records per layer": len(caches[0])})


def probe_layers(config: RunConfig, directory: Path) -> StageOutcome:
    """Trains a probe per layer and selects the intervention layer."""
    split, _ = load_corpus(directory)
    doc_ids = [example.doc_id for example in split.d_prob]
    labels = np.array([example.label for example in split.d_prob])
    features = {}
    for layer in range(config.lm.n_layers):
        cache = read_cache(probe_cache_path(directory, layer))
        features[layer] = np.stack([mean_pool(cache, doc_id) for doc_id in doc_ids])
    report = probe_layer_features(features, labels, config.seed, config.probe, config.eval.max_workers)
    layer = report.selected_layer
    frame = report.to_frame()
    frame.to_csv(directory / LAYERS_FILE, index=False)
    summary = ProbeSummary(selected_layer=layer, val_acc=report.results[layer].val_acc)
    (directory / PROBE_FILE).write_text(summary.model_dump_json(indent=2), encoding="utf-8")
    return StageOutcome(
        stage="probe",
        paths=[directory / LAYERS_FILE, directory / PROBE_FILE],
        log=frame,
        summary={"selected layer": layer, "validation accuracy": summary.val_acc},
    )


def train_autoencoders(config: RunConfig, directory: Path) -> StageOutcome:
    """Trains an SAE at the selected layer and at every extra layer."""
    split, tokenizer = load_corpus(directory)
    model = load_model(directory / LM_FILE)
    selected = load_selected_layer(directory)
    layers = sorted({selected, *config.sae.extra_layers})
    docs = _tokenized(split, tokenizer, [ref.doc_id for ref in split.sae_docs])
    caches = harvest_layers(model, docs, layers)
    corpus_hash = stage_hash(config, "gen-corpus")
    model_hash = sha256_file(directory / LM_FILE)
    paths, logs, summary = [], {}, {}
    for layer in layers:
        cache = dataclasses.replace(caches[layer], corpus_hash=corpus_hash, model_hash=model_hash)
        write_cache(cache, sae_cache_path(directory, layer))
        params, log = train_sae(cache, config.sae_config())
        save_sae(params, sae_path(directory, layer))
        log_path = directory / f"sae-{layer}_log.csv"
        log.to_csv(log_path, index=False)
        paths += [sae_cache_path(directory, layer), sae_path(directory, layer), log_path]
        logs[layer] = log
        summary[f"layer {layer} fvu"] = float(log["fvu"].iloc[-1])
    return StageOutcome(stage="train-sae", paths=paths, log=logs[selected], summary=summary)


def rank_features(config: RunConfig, directory: Path) -> StageOutcome:
    """Ranks SAE latents and residual neurons by their response to email tokens."""
    split, tokenizer = load_corpus(directory)
    model = load_model(directory / LM_FILE)
    layer = load_selected_layer(directory)
    sae = load_sae(sae_path(directory, layer))
    tokens_by_doc = dict(_tokenized(split, tokenizer, sorted({span.doc_id for span in split.d_topk})))
    latents = rank_pii_features(sae, model, split.d_topk, tokens_by_doc, layer)
    neurons = rank_pii_neurons(model, split.d_topk, tokens_by_doc, layer)
    latents.save(directory / LATENT_RANKING_FILE)
    neurons.save(directory / NEURON_RANKING_FILE)
    return StageOutcome(
        stage="rank",
        paths=[directory / LATENT_RANKING_FILE, directory / NEURON_RANKING_FILE],
        log=latents.to_frame().head(10),
        summary={"top latent": int(latents.indices[0]), "top neuron": int(neurons.indices[0])},
    )


def evaluate_defenses(config: RunConfig, directory: Path) -> StageOutcome:
    """Runs the defense grid and the per-layer pass-through comparison.

    Raises:
        ConfigurationError: If the grid has with-SAE cells but no SAE was trained.
    """
    split, tokenizer = load_corpus(directory)
    model = load_model(directory / LM_FILE)
    layer = load_selected_layer(directory)
    sae_layers = trained_sae_layers(directory)
    saes: dict[int, SaeParams] = {sae_layer: load_sae(sae_path(directory, sae_layer)) for sae_layer in sae_layers}
    sae = saes.get(layer)
    if sae is None and any(spec.use_sae for spec in config.eval.grid):
        raise ConfigurationError(f"the grid has with-SAE cells but no SAE was trained at layer {layer}; run `train-sae`")

    rankings = None
    if Manifest(directory).current("rank"):
        rankings = (
            FeatureRanking.load(directory / LATENT_RANKING_FILE),
            FeatureRanking.load(directory / NEURON_RANKING_FILE),
        )
    toolkits = {
        fraction: build_toolkit(
            model,
            tokenizer,
            split,
            layer,
            sae,
            config.eval.grid,
            config.seed,
            data_fraction=fraction,
            probe_config=config.probe,
            rankings=rankings if fraction == 1.0 else None,
        )
        for fraction in config.eval.data_fractions
    }
    report = run_grid(model, tokenizer, split, toolkits, config.eval)
    report.write_csv(directory / RECORDS_FILE)
    tables = [f"data fraction {fraction:g}\n{report.table(fraction)}" for fraction in config.eval.data_fractions]
    (directory / TABLE_FILE).write_text("\n\n".join(tables) + "\n", encoding="utf-8")
    paths = [directory / RECORDS_FILE, directory / TABLE_FILE]
    if saes:
        passthrough = layer_passthrough(model, tokenizer, split.d_adv, saes, config.eval.max_new)
        passthrough.to_csv(directory / PASSTHROUGH_FILE, index=False, float_format="%.10g")
        paths.append(directory / PASSTHROUGH_FILE)
    return StageOutcome(stage="eval", paths=paths, log=report.records, summary={"cells": len(report)})


RUNNERS: dict[str, Callable[[RunConfig, Path], StageOutcome]] = {
    "gen-corpus": gen_corpus,
    "train-lm": train_language_model,
    "harvest": harvest_probe_activations,
    "probe": probe_layers,
    "train-sae": train_autoencoders,
    "rank": rank_features,
    "eval": evaluate_defenses,
}


def run_stage(stage: str, config: RunConfig, force: bool = False) -> StageOutcome:
    """Runs one stage in the configured stage directory.

    Args:
        stage (str): One of `STAGES`.
        config (RunConfig): Run configuration.
        force (bool): Overwrite outputs of an earlier run of the stage.

    Raises:
        StageLockedError: If another stage holds the directory.
        StaleArtifactError: If an upstream stage is missing or out of date.
        ArtifactExistsError: If the stage already ran and `force` is off.
    """
    directory = config.stage_dir()
    with stage_lock(directory):
        manifest = Manifest(directory)
        for upstream in REQUIRES[stage]:
            manifest.require(upstream, stage_hash(config, upstream))
        for upstream in OPTIONAL.get(stage, ()):
            if manifest.current(upstream):
                manifest.require(upstream, stage_hash(config, upstream))
        if manifest.has_outputs(stage) and not force:
            raise ArtifactExistsError(f"`{stage}` outputs already exist in {directory}; use --force to overwrite")
        outcome = RUNNERS[stage](config, directory)
        manifest.record(stage, outcome.paths, stage_hash(config, stage))
    return outcome


def run_all(config: RunConfig, force: bool = False, stages: Sequence[str] = STAGES) -> list[StageOutcome]:
    """Runs `stages` in pipeline order."""
    return [run_stage(stage, config, force) for stage in STAGES if stage in stages]


def collect_reports(paths: Sequence[Path]) -> list[EvalReport]:
    """Reads records files, or the records file of each stage directory given.

    Raises:
        DataError: If a path has no records.
    """
    reports = []
    for path in paths:
        file = path / RECORDS_FILE if path.is_dir() else path
        if not file.is_file():
            raise DataError(f"no evaluation records at {file}; run `eval` first")
        reports.append(EvalReport.read_csv(file))
    return reports
