"""Linear probes that detect PII in document activations.

A probe is logistic regression on a mean-pooled activation vector. One probe
is trained per layer of the language model; the most accurate layer becomes
the intervention layer. Probes trained on SAE latents provide steering
directions.
"""

import dataclasses
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from src.actcache.cache import harvest_layers, mean_pool
from src.errors import DataError, DegenerateProbeError, DimensionError, ParameterError
from src.lm.model import LmModel
from src.numerics import tensor as T
from src.numerics.optim import Adam
from src.numerics.tensor import Tensor, no_grad
from src.utils.compat import StrEnum


class ProbeConfig(BaseModel):
    """Probe optimization settings."""

    model_config = ConfigDict(extra="forbid")

    lr: float = Field(default=0.05, gt=0)
    max_epochs: int = Field(default=500, ge=1)
    patience: int = Field(default=10, ge=1)
    val_fraction: float = Field(default=0.2, gt=0, lt=1)


class ProbeSpace(StrEnum):
    """The space a probe reads."""

    RESIDUAL = "residual"
    LATENT_FULL = "latent_full"
    LATENT_TOPK = "latent_topk"


@dataclasses.dataclass(frozen=True)
class ProbeModel:
    """A trained logistic-regression probe.

    Attributes:
        theta (np.ndarray): Weight vector; for latent_topk probes, one weight per selected latent.
        bias (float): Intercept. Not part of the steering direction.
        space (ProbeSpace): What the features are.
        indices (tuple[int, ...]): Selected latents of a latent_topk probe, ascending.
    """

    theta: np.ndarray
    bias: float
    space: ProbeSpace = ProbeSpace.RESIDUAL
    indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        """Checks the weights and the latent selection."""
        if not np.all(np.isfinite(self.theta)) or not np.isfinite(self.bias):
            raise ParameterError("probe weights must be finite")
        if self.space is ProbeSpace.LATENT_TOPK:
            if len(self.indices) != len(self.theta):
                raise DimensionError(f"{len(self.indices)} indices for {len(self.theta)} weights")
            if list(self.indices) != sorted(set(self.indices)):
                raise ParameterError("latent_topk indices must be unique and ascending")
        elif self.indices:
            raise ParameterError(f"a {self.space} probe takes no indices")

    def select(self, features: np.ndarray) -> np.ndarray:
        """Restricts full-width features to the columns this probe reads."""
        return features[..., list(self.indices)] if self.indices else features

    def logits(self, features: np.ndarray) -> np.ndarray:
        """<theta, x> + bias for each row of `features`."""
        return self.select(features) @ self.theta + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        """True where the probe says the row contains PII."""
        return self.logits(features) > 0


@dataclasses.dataclass(frozen=True)
class ProbeResult:
    """A probe and how it did on its validation split."""

    model: ProbeModel
    val_loss: float
    val_acc: float
    epochs: int


def _split(n: int, val_fraction: float, split_seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(split_seed).permutation(n)
    n_val = max(1, round(val_fraction * n))
    return order[n_val:], order[:n_val]


def train_probe(
    features: np.ndarray,
    labels: np.ndarray,
    split_seed: int,
    config: ProbeConfig | None = None,
    space: ProbeSpace = ProbeSpace.RESIDUAL,
    indices: Sequence[int] = (),
) -> ProbeResult:
    """Fits a logistic-regression probe with full-batch Adam and early stopping.

    The data is split into training and validation parts by `split_seed`.
    Training stops once the validation loss has not improved for
    `config.patience` epochs, and the best weights seen are returned.

    Args:
        features (np.ndarray): [n, d] feature rows.
        labels (np.ndarray): [n] booleans, True for PII.
        split_seed (int): Seed of the train/validation split.
        config (ProbeConfig | None): Optimization settings; defaults if None.
        space (ProbeSpace): Recorded on the returned model.
        indices (Sequence[int]): For latent_topk probes, the ascending latent
            indices; only those columns of `features` are used.

    Returns:
        ProbeResult: The probe with validation loss and accuracy (percent).

    Raises:
        DataError: If the labels contain a single class, or the training part does.
        DimensionError: If features and labels disagree in length.
    """
    config = config or ProbeConfig()
    x_all = np.asarray(features, dtype=np.float64)
    y_all = np.asarray(labels, dtype=bool)
    if x_all.ndim != 2 or len(x_all) != len(y_all):
        raise DimensionError(f"features {x_all.shape} do not match labels {y_all.shape}")
    if y_all.all() or not y_all.any():
        raise DataError("probe training needs both PII and non-PII examples")
    indices = tuple(int(i) for i in indices)
    if indices:
        x_all = x_all[:, list(indices)]

    train_rows, val_rows = _split(len(y_all), config.val_fraction, split_seed)
    x_train, y_train = x_all[train_rows], y_all[train_rows]
    x_val, y_val = x_all[val_rows], y_all[val_rows]
    if y_train.all() or not y_train.any():
        raise DataError("probe training split holds a single class")

    theta = Tensor(np.zeros(x_all.shape[1]), requires_grad=True)
    bias = Tensor(np.zeros(()), requires_grad=True)
    optimizer = Adam([theta, bias], lr=config.lr)
    x_train_t, x_val_t = Tensor(x_train), Tensor(x_val)

    def val_loss() -> float:
        with no_grad():
            return T.bce_with_logits(x_val_t @ theta + bias, y_val).item()

    best = (val_loss(), theta.data.copy(), float(bias.data))
    since_best = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        loss = T.bce_with_logits(x_train_t @ theta + bias, y_train)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        current = val_loss()
        if current < best[0]:
            best = (current, theta.data.copy(), float(bias.data))
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    model = ProbeModel(theta=best[1], bias=best[2], space=space, indices=indices)
    accuracy = 100.0 * float(np.mean((x_val @ model.theta + model.bias > 0) == y_val))
    return ProbeResult(model=model, val_loss=best[0], val_acc=accuracy, epochs=epoch)


def probe_direction(probe: ProbeModel) -> np.ndarray:
    """The probe's weight vector scaled to unit L2 norm.

    Raises:
        DegenerateProbeError: If the weights are all zero.
    """
    norm = float(np.linalg.norm(probe.theta))
    if norm == 0:
        raise DegenerateProbeError("probe weight vector is zero; no direction to steer along")
    return probe.theta / norm


# --Layer selection----------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class LayerReport:
    """One probe per layer and the layer chosen for intervention."""

    results: dict[int, ProbeResult]

    @property
    def selected_layer(self) -> int:
        """See `select_layer`."""
        return select_layer(self.results)

    def to_frame(self) -> pd.DataFrame:
        """One row per layer: block, val_loss, val_acc."""
        return pd.DataFrame(
            [
                {"block": layer, "val_loss": result.val_loss, "val_acc": result.val_acc}
                for layer, result in sorted(self.results.items())
            ],
        )


def select_layer(results: Mapping[int, ProbeResult]) -> int:
    """The layer with the highest validation accuracy; ties go to the lowest layer.

    Raises:
        DataError: If there are no results.
    """
    if not results:
        raise DataError("no layers were probed")
    return min(results, key=lambda layer: (-results[layer].val_acc, layer))


def probe_layer_features(
    features_by_layer: Mapping[int, np.ndarray],
    labels: np.ndarray,
    split_seed: int,
    config: ProbeConfig | None = None,
    max_workers: int = 1,
) -> LayerReport:
    """Trains one residual probe per layer on precomputed document features.

    Every layer uses the same train/validation split.

    Args:
        features_by_layer (Mapping[int, np.ndarray]): [n, d] features per layer.
        labels (np.ndarray): [n] booleans.
        split_seed (int): Seed of the shared split.
        config (ProbeConfig | None): Optimization settings.
        max_workers (int): Layers trained concurrently.
    """
    layers = sorted(features_by_layer)

    def fit(layer: int) -> ProbeResult:
        return train_probe(features_by_layer[layer], labels, split_seed, config)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            fitted = list(executor.map(fit, layers))
    else:
        fitted = [fit(layer) for layer in layers]
    return LayerReport(results=dict(zip(layers, fitted, strict=True)))


def probe_all_layers(
    model: LmModel,
    docs: Sequence[tuple[int, list[int]]],
    labels: Sequence[bool],
    split_seed: int,
    config: ProbeConfig | None = None,
    max_workers: int = 1,
) -> LayerReport:
    """Probes every layer of `model` on mean-pooled document activations.

    Args:
        model (LmModel): The language model.
        docs (Sequence[tuple[int, list[int]]]): Tokenized probing documents.
        labels (Sequence[bool]): PII label of each document.
        split_seed (int): Seed of the shared split.
        config (ProbeConfig | None): Optimization settings.
        max_workers (int): Layers trained concurrently.

    Raises:
        DataError: If there are no documents or a single class.
    """
    if not docs:
        raise DataError("no probing documents")
    layers = list(range(model.config.n_layers))
    caches = harvest_layers(model, docs, layers)
    features = {
        layer: np.stack([mean_pool(caches[layer], doc_id) for doc_id, _ in docs]) for layer in layers
    }
    return probe_layer_features(features, np.asarray(labels, dtype=bool), split_seed, config, max_workers)
