"""Defenses against PII leakage, expressed as residual-stream interventors.

Each defense either edits SAE latents (encode, edit, decode) or edits the
residual vector directly. Feature ablation zeroes the top-ranked coordinates.
The steering defenses add alpha * v to the active coordinates.
"""

import dataclasses
from collections.abc import Callable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.actcache.cache import ActCache
from src.errors import ConfigurationError, DataError, DimensionError, ParameterError
from src.lm.generation import Interventor, identity_interventor
from src.probe.probe import ProbeConfig, ProbeSpace, probe_direction, train_probe
from src.sae.ranking import FeatureRanking
from src.sae.sae import SaeParams, decode, encode
from src.utils.compat import StrEnum


class Method(StrEnum):
    """Defense methods."""

    NONE = "none"
    ABLATION = "ablation"
    STEER_PROBE = "steer_probe"
    STEER_TOPK_PROBE = "steer_topk_probe"
    STEER_MEAN_DIFF = "steer_mean_diff"

    @property
    def is_steering(self) -> bool:
        """Whether the method adds a steering vector."""
        return self in STEERING_SOURCES


class SteeringSource(StrEnum):
    """How a steering vector was built."""

    PROBE = "probe"
    TOPK_PROBE = "topk_probe"
    MEAN_DIFF = "mean_diff"


STEERING_SOURCES = {
    Method.STEER_PROBE: SteeringSource.PROBE,
    Method.STEER_TOPK_PROBE: SteeringSource.TOPK_PROBE,
    Method.STEER_MEAN_DIFF: SteeringSource.MEAN_DIFF,
}


class InterventionSpec(BaseModel):
    """One cell of the defense grid.

    Attributes:
        method (Method): The defense.
        k (int | None): Ablated features, or features kept by the top-k probe.
        alpha (float | None): Steering coefficient; negative steers away from PII.
        use_sae (bool): Intervene on SAE latents rather than the raw residual.
        layer (int | None): Layer override; None means the probe-selected layer.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    method: Method = Method.NONE
    k: int | None = Field(default=None, ge=1)
    alpha: float | None = None
    use_sae: bool = False
    layer: int | None = Field(default=None, ge=0)

    @model_validator(mode="after")
    def check_arguments(self) -> "InterventionSpec":
        """Each method takes exactly the arguments it uses."""
        needs_k = self.method in {Method.ABLATION, Method.STEER_TOPK_PROBE}
        needs_alpha = self.method.is_steering
        if needs_k != (self.k is not None):
            raise ValueError(f"{self.method} {'requires' if needs_k else 'does not take'} k")
        if needs_alpha != (self.alpha is not None):
            raise ValueError(f"{self.method} {'requires' if needs_alpha else 'does not take'} alpha")
        return self

    @property
    def label(self) -> str:
        """Short human-readable name, e.g. "ablation k=16 +sae"."""
        parts = [str(self.method)]
        if self.k is not None:
            parts.append(f"k={self.k}")
        if self.alpha is not None:
            parts.append(f"alpha={self.alpha:g}")
        parts.append("+sae" if self.use_sae else "-sae")
        return " ".join(parts)


@dataclasses.dataclass(frozen=True)
class SteeringVector:
    """A steering direction in latent (width h) or residual (width d_emb) space.

    Attributes:
        v (np.ndarray): The direction.
        source (SteeringSource): How it was built.
        use_sae (bool): Whether `v` lives in SAE latent space.
        indices (tuple[int, ...]): Support of a top-k probe vector.
    """

    v: np.ndarray
    source: SteeringSource
    use_sae: bool
    indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        """Checks the normalization and support of the vector."""
        if not np.all(np.isfinite(self.v)):
            raise ParameterError("steering vector must be finite")
        if self.source in {SteeringSource.PROBE, SteeringSource.TOPK_PROBE}:
            if abs(float(np.linalg.norm(self.v)) - 1) > 1e-9:
                raise ParameterError(f"{self.source} steering vector must have unit norm")
        if self.source is SteeringSource.TOPK_PROBE:
            outside = np.ones(len(self.v), dtype=bool)
            outside[list(self.indices)] = False
            if np.any(self.v[outside]):
                raise ParameterError("top-k probe steering vector is nonzero outside its indices")

    @property
    def norm(self) -> float:
        """L2 norm of `v`."""
        return float(np.linalg.norm(self.v))


# --Latent edits--------------------------------------------------------------


def ablate(z: np.ndarray, indices: Sequence[int]) -> np.ndarray:
    """Returns a copy of `z` with the listed coordinates zeroed.

    Works on a single vector [h] or a batch [n, h].

    Raises:
        ParameterError: If an index is outside [0, h).
    """
    h = z.shape[-1]
    index_array = np.asarray(list(indices), dtype=np.int64)
    if index_array.size and (index_array.min() < 0 or index_array.max() >= h):
        raise ParameterError(f"ablation indices must lie in [0, {h}), got {sorted(indices)}")
    out = z.copy()
    out[..., index_array] = 0.0
    return out


def steer(z: np.ndarray, v: np.ndarray, alpha: float) -> np.ndarray:
    """Adds alpha * v to the nonzero coordinates of `z` and leaves zeros untouched.

    Raises:
        DimensionError: If `v` does not match the last axis of `z`.
    """
    if v.shape != z.shape[-1:]:
        raise DimensionError(f"steering vector {v.shape} does not match latents {z.shape}")
    return np.where(z != 0, z + alpha * v, z)


# --Steering vectors-------------------------------------------------------------


def pooled_features(cache: ActCache, doc_ids: Sequence[int], sae: SaeParams | None = None) -> np.ndarray:
    """Per-document mean of residual vectors, or of their SAE latents when `sae` is given.

    Returns:
        np.ndarray: [len(doc_ids), d_emb or h].
    """
    rows = []
    for doc_id in doc_ids:
        vectors = cache.doc_vectors(doc_id)
        rows.append((encode(sae, vectors) if sae is not None else vectors).mean(axis=0))
    return np.stack(rows)


def build_steering_vector(
    source: SteeringSource,
    features: np.ndarray,
    labels: np.ndarray,
    use_sae: bool,
    split_seed: int = 0,
    probe_config: ProbeConfig | None = None,
    topk_indices: Sequence[int] = (),
) -> SteeringVector:
    """Builds a steering direction from pooled probing features.

    Args:
        source (SteeringSource): probe (normalized probe weights), topk_probe
            (probe on the `topk_indices` coordinates only, zero elsewhere,
            normalized over its support) or mean_diff (mean PII features minus
            mean non-PII features, not normalized).
        features (np.ndarray): [n, width] pooled features.
        labels (np.ndarray): [n] booleans, True for PII.
        use_sae (bool): Whether the features are SAE latents.
        split_seed (int): Probe train/validation split seed.
        probe_config (ProbeConfig | None): Probe optimization settings.
        topk_indices (Sequence[int]): Selected coordinates for topk_probe.

    Raises:
        DataError: If a class is missing.
        ConfigurationError: If topk_probe has no indices.
        DegenerateProbeError: If a probe's weights are zero.
    """
    labels = np.asarray(labels, dtype=bool)
    if labels.all() or not labels.any():
        raise DataError("steering vectors need both PII and non-PII examples")
    if source is SteeringSource.MEAN_DIFF:
        v = features[labels].mean(axis=0) - features[~labels].mean(axis=0)
        return SteeringVector(v=v, source=source, use_sae=use_sae)
    if source is SteeringSource.PROBE:
        space = ProbeSpace.LATENT_FULL if use_sae else ProbeSpace.RESIDUAL
        probe = train_probe(features, labels, split_seed, probe_config, space=space).model
        return SteeringVector(v=probe_direction(probe), source=source, use_sae=use_sae)

    if not topk_indices:
        raise ConfigurationError("a top-k probe needs feature indices from a ranking")
    indices = tuple(sorted(int(i) for i in topk_indices))
    probe = train_probe(features, labels, split_seed, probe_config, ProbeSpace.LATENT_TOPK, indices).model
    v = np.zeros(features.shape[1])
    v[list(indices)] = probe_direction(probe)
    return SteeringVector(v=v, source=source, use_sae=use_sae, indices=indices)


# --Interventors-------------------------------------------------------------


def make_interventor(
    spec: InterventionSpec,
    layer: int,
    sae: SaeParams | None = None,
    steering: SteeringVector | None = None,
    ranking: FeatureRanking | None = None,
    intervene_prefix: bool = False,
) -> Interventor:
    """Turns a grid cell into a residual-stream rewrite.

    With `use_sae` the rewrite is decode(edit(encode(a))); without it, the edit
    acts on the residual vector itself: ablation zeroes the top-ranked neurons
    and steering adds alpha * v everywhere.

    Args:
        spec (InterventionSpec): The defense.
        layer (int): The selected layer, used unless `spec.layer` overrides it.
        sae (SaeParams | None): Autoencoder at that layer, required with use_sae.
        steering (SteeringVector | None): Required by steering methods; must
            match `spec.method` and its space.
        ranking (FeatureRanking | None): Latent ranking (with SAE) or neuron
            ranking (without), required by ablation.
        intervene_prefix (bool): Also rewrite prompt positions.

    Raises:
        ConfigurationError: If a dependency is missing or does not fit.
    """
    layer = spec.layer if spec.layer is not None else layer
    if spec.use_sae:
        if sae is None:
            raise ConfigurationError(f"{spec.label} needs a trained SAE")
        if sae.layer != layer:
            raise ConfigurationError(f"{spec.label} runs at layer {layer} but the SAE reads layer {sae.layer}")
    elif spec.method is Method.NONE:
        return dataclasses.replace(identity_interventor(layer), intervene_prefix=intervene_prefix)
    width = sae.h if spec.use_sae else None

    edit = _edit(spec, steering, ranking, width)
    if spec.use_sae:

        def fn(vectors: np.ndarray) -> np.ndarray:
            return decode(sae, edit(encode(sae, vectors)))

    else:
        fn = edit
    return Interventor(layer=layer, fn=fn, intervene_prefix=intervene_prefix)


def _edit(
    spec: InterventionSpec,
    steering: SteeringVector | None,
    ranking: FeatureRanking | None,
    width: int | None,
) -> Callable[[np.ndarray], np.ndarray]:
    if spec.method is Method.NONE:
        return lambda values: values

    if spec.method is Method.ABLATION:
        if ranking is None:
            raise ConfigurationError(f"{spec.label} needs a feature ranking")
        if spec.k > len(ranking) or (width is not None and len(ranking) != width):
            raise ConfigurationError(f"{spec.label} does not fit a ranking of {len(ranking)} features")
        indices = ranking.top(spec.k)
        return lambda values: ablate(values, indices)

    if steering is None:
        raise ConfigurationError(f"{spec.label} needs a steering vector")
    if steering.source is not STEERING_SOURCES[spec.method] or steering.use_sae != spec.use_sae:
        raise ConfigurationError(
            f"{spec.label} cannot use a {steering.source} vector built {'with' if steering.use_sae else 'without'} SAE",
        )
    if spec.method is Method.STEER_TOPK_PROBE and len(steering.indices) != spec.k:
        raise ConfigurationError(f"{spec.label} got a top-k probe over {len(steering.indices)} features")
    if width is not None and len(steering.v) != width:
        raise ConfigurationError(f"steering vector of width {len(steering.v)} does not fit h={width}")
    alpha = spec.alpha
    if spec.use_sae:
        return lambda values: steer(values, steering.v, alpha)
    return lambda values: values + alpha * steering.v
