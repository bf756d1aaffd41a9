"""k-sparse autoencoder over residual-stream activations.

Encoding keeps the k largest pre-activations of W_enc (a - b_pre); decoding is
W_dec z + b_pre. Encoder and decoder weights are untied.
"""

import dataclasses
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import DimensionError, ParameterError
from src.numerics.tensor import topk_indices
from src.utils.checkpoint import load_checkpoint, save_checkpoint


class SaeConfig(BaseModel):
    """Sparse autoencoder shape and training settings.

    Attributes:
        h (int): Number of latents; must be at least d_emb.
        k (int): Active latents per vector.
        k_aux (int): Dead latents used by the auxiliary loss.
        alpha_aux (float): Weight of the auxiliary loss.
        dead_threshold (int): Tokens without firing after which a latent counts as dead.
        lr (float): Adam learning rate.
        batch_size (int): Vectors per optimizer step.
        clip_grad (float | None): Maximum global gradient norm.
        epochs (int): Passes over the activation cache.
        seed (int): Seed for initialization and batch order.
        extra_layers (list[int]): Further layers to train pass-through SAEs at.
    """

    model_config = ConfigDict(extra="forbid")

    h: int = Field(default=512, ge=1)
    k: int = Field(default=32, ge=1)
    k_aux: int = Field(default=32, ge=1)
    alpha_aux: float = Field(default=1 / 32, ge=0)
    dead_threshold: int = Field(default=10_000, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    batch_size: int = Field(default=256, ge=1)
    clip_grad: float | None = 1.0
    epochs: int = Field(default=10, ge=0)
    seed: int = 0
    extra_layers: list[int] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_sparsity(self) -> "SaeConfig":
        """k and k_aux must not exceed the number of latents."""
        if self.k > self.h or self.k_aux > self.h:
            raise ValueError(f"k={self.k} and k_aux={self.k_aux} must not exceed h={self.h}")
        return self


@dataclasses.dataclass(frozen=True)
class SaeParams:
    """Trained autoencoder weights.

    Attributes:
        w_enc (np.ndarray): [h, d_emb] encoder.
        w_dec (np.ndarray): [d_emb, h] decoder with unit-norm columns.
        b_pre (np.ndarray): [d_emb] shared centering bias.
        k (int): Active latents per vector.
        k_aux (int): Dead latents used by the auxiliary loss.
        alpha_aux (float): Weight of the auxiliary loss.
        layer (int): Residual layer the autoencoder reads.
    """

    w_enc: np.ndarray
    w_dec: np.ndarray
    b_pre: np.ndarray
    k: int
    k_aux: int
    alpha_aux: float
    layer: int = 0

    def __post_init__(self) -> None:
        """Checks that the weights fit together."""
        h, d_emb = self.w_enc.shape
        if self.w_dec.shape != (d_emb, h) or self.b_pre.shape != (d_emb,):
            raise DimensionError(
                f"w_enc {self.w_enc.shape}, w_dec {self.w_dec.shape} and b_pre {self.b_pre.shape} disagree",
            )
        if h < d_emb:
            raise ParameterError(f"h={h} must be at least d_emb={d_emb}")
        if not 1 <= self.k <= h or not 1 <= self.k_aux <= h:
            raise ParameterError(f"k={self.k} and k_aux={self.k_aux} must be in [1, {h}]")

    @property
    def h(self) -> int:
        """Number of latents."""
        return self.w_enc.shape[0]

    @property
    def d_emb(self) -> int:
        """Width of the residual vectors."""
        return self.w_enc.shape[1]


def pre_activations(params: SaeParams, a: np.ndarray) -> np.ndarray:
    """W_enc (a - b_pre) for a vector [d_emb] or a batch [n, d_emb]."""
    if a.shape[-1] != params.d_emb:
        raise DimensionError(f"activation shape {a.shape} does not match d_emb={params.d_emb}")
    return (a - params.b_pre) @ params.w_enc.T


def encode(params: SaeParams, a: np.ndarray) -> np.ndarray:
    """Sparse latents of `a`: the k largest pre-activations kept, the rest zero.

    Args:
        params (SaeParams): The autoencoder.
        a (np.ndarray): A vector [d_emb] or a batch [n, d_emb].

    Returns:
        np.ndarray: [h] or [n, h] latents with at most k nonzeros per row.
    """
    pre = pre_activations(params, a)
    return np.where(topk_indices(pre, params.k), pre, 0.0)


def decode(params: SaeParams, z: np.ndarray) -> np.ndarray:
    """W_dec z + b_pre for a latent vector [h] or a batch [n, h]."""
    if z.shape[-1] != params.h:
        raise DimensionError(f"latent shape {z.shape} does not match h={params.h}")
    return z @ params.w_dec.T + params.b_pre


def reconstruct(params: SaeParams, a: np.ndarray) -> np.ndarray:
    """decode(encode(a))."""
    return decode(params, encode(params, a))


class DeadLatentTracker:
    """Counts, per latent, the tokens seen since it last fired.

    Example:
        ```python
        tracker = DeadLatentTracker(h=512, threshold=10_000)
        tracker.update(z_batch)
        dead = tracker.dead()
        ```
    """

    def __init__(self, h: int, threshold: int) -> None:
        """Starts every counter at zero."""
        if threshold < 1:
            raise ParameterError(f"threshold must be positive, got {threshold}")
        self.tokens_since_fire = np.zeros(h, dtype=np.int64)
        self.threshold = threshold

    def update(self, z: np.ndarray) -> None:
        """Advances every counter by the batch size and resets the latents that fired."""
        fired = np.any(z != 0, axis=0)
        self.tokens_since_fire += z.shape[0]
        self.tokens_since_fire[fired] = 0

    def dead(self) -> np.ndarray:
        """Boolean mask of latents at or past the threshold."""
        return self.tokens_since_fire >= self.threshold

    def dead_fraction(self) -> float:
        """Share of latents currently dead."""
        return float(np.mean(self.dead()))


def save_sae(params: SaeParams, path: Path) -> None:
    """Writes an autoencoder checkpoint."""
    save_checkpoint(
        path,
        "sae",
        {"k": params.k, "k_aux": params.k_aux, "alpha_aux": params.alpha_aux, "layer": params.layer},
        {"w_enc": params.w_enc, "w_dec": params.w_dec, "b_pre": params.b_pre},
    )


def load_sae(path: Path) -> SaeParams:
    """Reads a checkpoint written by `save_sae`.

    Raises:
        InputError: If the file is not an autoencoder checkpoint.
    """
    checkpoint = load_checkpoint(path, kind="sae")
    return SaeParams(**checkpoint.params, **checkpoint.config)
