"""Training the sparse autoencoder on an activation cache."""

import dataclasses

import numpy as np
import pandas as pd

from src.actcache.cache import ActCache, stream_batches
from src.errors import InputError, TrainingDivergedError
from src.numerics import tensor as T
from src.numerics.optim import Adam
from src.numerics.tensor import Tensor
from src.sae.sae import DeadLatentTracker, SaeConfig, SaeParams, reconstruct

EVAL_CHUNK = 4096


@dataclasses.dataclass
class SaeLoss:
    """Loss terms of one batch."""

    total: Tensor
    mse: Tensor
    aux: Tensor
    z: np.ndarray
    n_dead: int


def sae_loss(
    w_enc: Tensor,
    w_dec: Tensor,
    b_pre: Tensor,
    batch: np.ndarray,
    k: int,
    k_aux: int,
    alpha_aux: float,
    dead: np.ndarray,
) -> SaeLoss:
    """Reconstruction loss plus the dead-latent auxiliary loss for one batch.

    The auxiliary term reconstructs the detached residual error e = a - a_hat
    from the top min(k_aux, #dead) pre-activations among dead latents, without
    the centering bias. It is zero when no latent is dead.

    Args:
        w_enc (Tensor): [h, d_emb] encoder.
        w_dec (Tensor): [d_emb, h] decoder.
        b_pre (Tensor): [d_emb] centering bias.
        batch (np.ndarray): [n, d_emb] activations.
        k (int): Active latents.
        k_aux (int): Dead latents for the auxiliary loss.
        alpha_aux (float): Auxiliary weight.
        dead (np.ndarray): [h] dead-latent mask.
    """
    a = Tensor(batch)
    pre = (a - b_pre) @ T.transpose(w_enc)
    z = T.topk_mask(pre, k)
    a_hat = z @ T.transpose(w_dec) + b_pre
    diff = a - a_hat
    mse = T.mean(T.sum_(diff * diff, axis=1))

    n_dead = int(dead.sum())
    if n_dead == 0:
        aux = Tensor(np.zeros(()))
    else:
        e = Tensor(batch - a_hat.data)
        z_aux = T.topk_mask(pre, min(k_aux, n_dead), allowed=dead)
        aux_diff = e - z_aux @ T.transpose(w_dec)
        aux = T.mean(T.sum_(aux_diff * aux_diff, axis=1))
    return SaeLoss(total=mse + alpha_aux * aux, mse=mse, aux=aux, z=z.data, n_dead=n_dead)


def unit_norm_columns(matrix: np.ndarray) -> np.ndarray:
    """Scales every column to unit L2 norm; zero columns are left as they are."""
    norms = np.linalg.norm(matrix, axis=0, keepdims=True)
    return matrix / np.where(norms == 0, 1.0, norms)


def remove_parallel_grad(w_dec: Tensor) -> None:
    """Drops the component of each decoder column's gradient along the column."""
    if w_dec.grad is None:
        return
    normed = unit_norm_columns(w_dec.data)
    w_dec.grad = w_dec.grad - np.sum(w_dec.grad * normed, axis=0, keepdims=True) * normed


def init_params(cache: ActCache, config: SaeConfig) -> SaeParams:
    """Random encoder, decoder from its transpose with unit columns, b_pre at the mean activation."""
    d_emb = cache.d_emb
    rng = np.random.default_rng(config.seed)
    bound = 1.0 / np.sqrt(d_emb)
    w_enc = rng.uniform(-bound, bound, size=(config.h, d_emb))
    return SaeParams(
        w_enc=w_enc,
        w_dec=unit_norm_columns(w_enc.T.copy()),
        b_pre=cache.vectors.mean(axis=0),
        k=config.k,
        k_aux=config.k_aux,
        alpha_aux=config.alpha_aux,
        layer=cache.layer,
    )


def fraction_of_variance_unexplained(params: SaeParams, cache: ActCache) -> float:
    """sum ||a - reconstruct(a)||^2 / sum ||a - mean(a)||^2 over the cache."""
    centre = cache.vectors.mean(axis=0)
    error, spread = 0.0, 0.0
    for batch in stream_batches(cache, EVAL_CHUNK, shuffle_seed=None):
        error += float(np.sum((batch - reconstruct(params, batch)) ** 2))
        spread += float(np.sum((batch - centre) ** 2))
    return error / spread if spread > 0 else 0.0


def mean_squared_error(params: SaeParams, cache: ActCache) -> float:
    """Mean over vectors of ||a - reconstruct(a)||^2."""
    total = 0.0
    for batch in stream_batches(cache, EVAL_CHUNK, shuffle_seed=None):
        total += float(np.sum((batch - reconstruct(params, batch)) ** 2))
    return total / len(cache)


def train_sae(cache: ActCache, config: SaeConfig) -> tuple[SaeParams, pd.DataFrame]:
    """Trains a k-sparse autoencoder on every vector of `cache`.

    After each optimizer step the decoder columns are rescaled to unit norm.

    Args:
        cache (ActCache): Activations at the layer to model.
        config (SaeConfig): Shape and optimization settings.

    Returns:
        tuple[SaeParams, pd.DataFrame]: The trained autoencoder and one log row
        per epoch (epoch 0 is the initialization) with columns epoch, step,
        loss, mse, aux_loss, fvu, dead_fraction.

    Raises:
        InputError: If the cache is empty.
        ParameterError: If h < d_emb.
        TrainingDivergedError: If the loss becomes non-finite.
    """
    if len(cache) == 0:
        raise InputError(f"activation cache for layer {cache.layer} is empty")
    start = init_params(cache, config)
    w_enc = Tensor(start.w_enc, requires_grad=True)
    w_dec = Tensor(start.w_dec, requires_grad=True)
    b_pre = Tensor(start.b_pre, requires_grad=True)
    optimizer = Adam([w_enc, w_dec, b_pre], lr=config.lr, clip_grad=config.clip_grad)
    tracker = DeadLatentTracker(config.h, config.dead_threshold)

    def snapshot() -> SaeParams:
        return dataclasses.replace(start, w_enc=w_enc.data.copy(), w_dec=w_dec.data.copy(), b_pre=b_pre.data.copy())

    rows = [
        {
            "epoch": 0,
            "step": 0,
            "loss": float("nan"),
            "mse": mean_squared_error(start, cache),
            "aux_loss": float("nan"),
            "fvu": fraction_of_variance_unexplained(start, cache),
            "dead_fraction": 0.0,
        },
    ]
    step = 0
    for epoch in range(1, config.epochs + 1):
        losses, mses, auxes = [], [], []
        for batch in stream_batches(cache, config.batch_size, shuffle_seed=(config.seed, epoch)):
            loss = sae_loss(
                w_enc, w_dec, b_pre, batch, config.k, config.k_aux, config.alpha_aux, tracker.dead(),
            )
            step += 1
            if not np.isfinite(loss.total.item()):
                raise TrainingDivergedError("sparse autoencoder", step)
            tracker.update(loss.z)
            optimizer.zero_grad()
            loss.total.backward()
            remove_parallel_grad(w_dec)
            optimizer.step()
            w_dec.data = unit_norm_columns(w_dec.data)
            losses.append(loss.total.item())
            mses.append(loss.mse.item())
            auxes.append(loss.aux.item())
        params = snapshot()
        rows.append(
            {
                "epoch": epoch,
                "step": step,
                "loss": float(np.mean(losses)),
                "mse": float(np.mean(mses)),
                "aux_loss": float(np.mean(auxes)),
                "fvu": fraction_of_variance_unexplained(params, cache),
                "dead_fraction": tracker.dead_fraction(),
            },
        )
    return snapshot(), pd.DataFrame(rows)
