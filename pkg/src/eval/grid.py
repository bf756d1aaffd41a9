"""Evaluating every defense configuration of a run."""

import dataclasses
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from src.actcache.cache import harvest
from src.corpus.split import AdvPrompt, DatasetSplit, subsample
from src.corpus.tokenizer import Tokenizer
from src.errors import ConfigurationError
from src.eval.metrics import measure_leakage, measure_utility
from src.eval.report import EvalReport
from src.intervene.interventions import (
    STEERING_SOURCES,
    InterventionSpec,
    Method,
    SteeringVector,
    build_steering_vector,
    make_interventor,
    pooled_features,
)
from src.lm.generation import Interventor
from src.lm.model import LmModel
from src.probe.probe import ProbeConfig
from src.sae.ranking import FeatureRanking, rank_pii_features, rank_pii_neurons
from src.sae.sae import SaeParams

STEERING_ALPHAS = (-2.0, -4.0, -8.0)
ABLATION_KS = (4, 16, 48)
TOPK_PROBE_K = 16
SUBSAMPLED_METHODS = (Method.ABLATION, Method.STEER_PROBE)
MIN_PROBE_DOCS = 4


def desk_grid() -> list[InterventionSpec]:
    """No defense, ablation at three k, and each steering method at three alphas, with and without SAE."""
    specs = []
    for use_sae in (True, False):
        specs.append(InterventionSpec(use_sae=use_sae))
        specs.extend(InterventionSpec(method=Method.ABLATION, k=k, use_sae=use_sae) for k in ABLATION_KS)
        for alpha in STEERING_ALPHAS:
            specs.append(InterventionSpec(method=Method.STEER_PROBE, alpha=alpha, use_sae=use_sae))
            specs.append(
                InterventionSpec(method=Method.STEER_TOPK_PROBE, k=TOPK_PROBE_K, alpha=alpha, use_sae=use_sae),
            )
            specs.append(InterventionSpec(method=Method.STEER_MEAN_DIFF, alpha=alpha, use_sae=use_sae))
    return specs


class EvalConfig(BaseModel):
    """Defense grid and evaluation settings.

    Attributes:
        grid (list[InterventionSpec]): Cells to evaluate.
        max_new (int): Tokens generated per extraction prompt.
        data_fractions (list[float]): Fractions of the ranking and probing data
            to rebuild the defenses from; below 1 only ablation and probe
            steering cells are re-run.
        max_workers (int): Cells evaluated concurrently.
        intervene_prefix (bool): Also intervene on prompt positions.
        passthrough_tolerance (float): Allowed leakage change, in percentage
            points, when splicing the SAE in without a defense.
    """

    model_config = ConfigDict(extra="forbid")

    grid: list[InterventionSpec] = Field(default_factory=desk_grid)
    max_new: int = Field(default=16, ge=1)
    data_fractions: list[float] = Field(default_factory=lambda: [1.0, 0.01])
    max_workers: int = Field(default=1, ge=1)
    intervene_prefix: bool = False
    passthrough_tolerance: float = Field(default=2.0, ge=0)


@dataclasses.dataclass(frozen=True)
class DefenseToolkit:
    """Everything the grid cells of one data fraction draw on.

    Attributes:
        layer (int): Intervention layer.
        data_fraction (float): Share of ranking and probing data used.
        sae (SaeParams | None): Autoencoder at `layer`, if one was trained.
        latent_ranking (FeatureRanking | None): SAE latents by PII magnitude.
        neuron_ranking (FeatureRanking): Residual coordinates by PII magnitude.
        steering (dict): Steering vectors keyed by (method, use_sae, k).
    """

    layer: int
    data_fraction: float
    sae: SaeParams | None
    latent_ranking: FeatureRanking | None
    neuron_ranking: FeatureRanking
    steering: dict[tuple[Method, bool, int | None], SteeringVector]

    def steering_vector(self, spec: InterventionSpec) -> SteeringVector | None:
        """The vector a steering cell uses, if it was built."""
        return self.steering.get((spec.method, spec.use_sae, spec.k))

    def interventor(self, spec: InterventionSpec, intervene_prefix: bool = False) -> Interventor:
        """See `make_interventor`.

        Raises:
            ConfigurationError: If the cell needs something this toolkit lacks.
        """
        return make_interventor(
            spec,
            self.layer,
            sae=self.sae,
            steering=self.steering_vector(spec),
            ranking=self.latent_ranking if spec.use_sae else self.neuron_ranking,
            intervene_prefix=intervene_prefix,
        )


def build_toolkit(
    model: LmModel,
    tokenizer: Tokenizer,
    split: DatasetSplit,
    layer: int,
    sae: SaeParams | None,
    specs: Sequence[InterventionSpec],
    seed: int,
    data_fraction: float = 1.0,
    probe_config: ProbeConfig | None = None,
    rankings: tuple[FeatureRanking | None, FeatureRanking] | None = None,
) -> DefenseToolkit:
    """Ranks features and builds every steering vector `specs` need.

    Args:
        model (LmModel): The language model.
        tokenizer (Tokenizer): Its tokenizer.
        split (DatasetSplit): The run's datasets.
        layer (int): Intervention layer.
        sae (SaeParams | None): Autoencoder at `layer`; with-SAE vectors are skipped without one.
        specs (Sequence[InterventionSpec]): Cells to prepare for.
        seed (int): Run seed, used for subsampling and probe splits.
        data_fraction (float): Share of d_topk and of each d_prob class to use.
        probe_config (ProbeConfig | None): Settings for steering probes.
        rankings (tuple | None): Precomputed (latent, neuron) rankings of the
            same ranking documents, used instead of ranking again.
    """
    sub = subsample(split, data_fraction, seed, min_count=MIN_PROBE_DOCS)
    docs = split.docs_by_id()
    needed = {span.doc_id for span in sub.d_topk} | {example.doc_id for example in sub.d_prob}
    tokens_by_doc = {doc_id: tokenizer.encode(docs[doc_id].text) for doc_id in sorted(needed)}

    if rankings is not None:
        latent_ranking, neuron_ranking = rankings
    else:
        neuron_ranking = rank_pii_neurons(model, sub.d_topk, tokens_by_doc, layer)
        latent_ranking = rank_pii_features(sae, model, sub.d_topk, tokens_by_doc, layer) if sae is not None else None

    prob_ids = [example.doc_id for example in sub.d_prob]
    labels = np.array([example.label for example in sub.d_prob])
    cache = harvest(model, [(doc_id, tokens_by_doc[doc_id]) for doc_id in prob_ids], layer)
    features = {False: pooled_features(cache, prob_ids)}
    if sae is not None:
        features[True] = pooled_features(cache, prob_ids, sae)

    steering = {}
    for spec in specs:
        key = (spec.method, spec.use_sae, spec.k)
        if not spec.method.is_steering or key in steering or spec.use_sae not in features:
            continue
        ranking = latent_ranking if spec.use_sae else neuron_ranking
        steering[key] = build_steering_vector(
            STEERING_SOURCES[spec.method],
            features[spec.use_sae],
            labels,
            use_sae=spec.use_sae,
            split_seed=seed,
            probe_config=probe_config,
            topk_indices=ranking.top(spec.k) if spec.k is not None else (),
        )
    return DefenseToolkit(
        layer=layer,
        data_fraction=data_fraction,
        sae=sae,
        latent_ranking=latent_ranking,
        neuron_ranking=neuron_ranking,
        steering=steering,
    )


def grid_cells(config: EvalConfig) -> list[tuple[float, InterventionSpec]]:
    """(data_fraction, spec) pairs in report order.

    Raises:
        ConfigurationError: If the grid lacks a no-defense cell with or without SAE.
    """
    present = {spec.use_sae for spec in config.grid if spec.method is Method.NONE}
    if present != {True, False}:
        raise ConfigurationError("the grid needs a no-defense cell both with and without SAE")
    cells = []
    for fraction in config.data_fractions:
        cells.extend(
            (fraction, spec)
            for spec in config.grid
            if fraction == 1.0 or spec.method in SUBSAMPLED_METHODS
        )
    return cells


def run_grid(
    model: LmModel,
    tokenizer: Tokenizer,
    split: DatasetSplit,
    toolkits: Mapping[float, DefenseToolkit],
    config: EvalConfig,
) -> EvalReport:
    """Measures leakage and utility for every grid cell.

    All interventors are built before any evaluation, so a misconfigured cell
    fails before work starts. Rows come back in cell order regardless of
    `max_workers`.

    Args:
        model (LmModel): The language model.
        tokenizer (Tokenizer): Its tokenizer.
        split (DatasetSplit): Provides d_adv, held-out documents and cloze items.
        toolkits (Mapping[float, DefenseToolkit]): One toolkit per data fraction.
        config (EvalConfig): Grid and settings.

    Raises:
        ConfigurationError: If a cell cannot be built.
    """
    cells = grid_cells(config)
    prepared = []
    for fraction, spec in cells:
        if fraction not in toolkits:
            raise ConfigurationError(f"no defenses were built for data fraction {fraction}")
        toolkit = toolkits[fraction]
        prepared.append((fraction, spec, toolkit, toolkit.interventor(spec, config.intervene_prefix)))

    def evaluate(cell: tuple[float, InterventionSpec, DefenseToolkit, Interventor]) -> dict:
        fraction, spec, toolkit, interventor = cell
        leakage = measure_leakage(model, tokenizer, split.d_adv, interventor, config.max_new)
        utility = measure_utility(model, tokenizer, split.heldout_docs, split.cloze_items, interventor)
        vector = toolkit.steering_vector(spec)
        return {
            "method": str(spec.method),
            "k": spec.k,
            "alpha": spec.alpha,
            "use_sae": spec.use_sae,
            "data_fraction": fraction,
            "layer": interventor.layer,
            "n_prompts": leakage.n_prompts,
            "n_leaked": leakage.n_leaked,
            "leak_rate": leakage.rate,
            "heldout_ppl": utility.heldout_ppl,
            "cloze_acc": utility.cloze_acc,
            "avg_utility": utility.avg_utility,
            "vector_norm": vector.norm if vector is not None else None,
        }

    if config.max_workers > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as executor:
            rows = list(executor.map(evaluate, prepared))
    else:
        rows = [evaluate(cell) for cell in prepared]
    return EvalReport.from_rows(rows)


def layer_passthrough(
    model: LmModel,
    tokenizer: Tokenizer,
    d_adv: Sequence[AdvPrompt],
    saes: Mapping[int, SaeParams],
    max_new: int = 16,
) -> pd.DataFrame:
    """Leakage with an SAE spliced in at each trained layer, against the unmodified model.

    Returns:
        pd.DataFrame: Columns layer, baseline_leak, passthrough_leak, delta.
    """
    baseline = measure_leakage(model, tokenizer, d_adv, None, max_new).rate
    rows = []
    for layer, sae in sorted(saes.items()):
        interventor = make_interventor(InterventionSpec(use_sae=True), layer, sae=sae)
        rate = measure_leakage(model, tokenizer, d_adv, interventor, max_new).rate
        rows.append({"layer": layer, "baseline_leak": baseline, "passthrough_leak": rate, "delta": rate - baseline})
    return pd.DataFrame(rows, columns=["layer", "baseline_leak", "passthrough_leak", "delta"])
