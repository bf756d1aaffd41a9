"""Next-token training of the language model."""

from collections.abc import Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from src.errors import InputError, TrainingDivergedError
from src.lm.generation import Interventor
from src.lm.model import LmConfig, LmModel
from src.numerics import tensor as T
from src.numerics.optim import Adam
from src.numerics.tensor import Tensor, no_grad


class LmTrainConfig(BaseModel):
    """Optimization settings for the language model."""

    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=30, ge=0)
    batch_size: int = Field(default=32, ge=1)
    lr: float = Field(default=3e-3, gt=0)
    clip_grad: float | None = 1.0
    seed: int = 0


def pad_batch(sequences: Sequence[list[int]], pad_id: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Right-pads sequences into an id array and a validity mask, both [batch, time]."""
    width = max(len(s) for s in sequences)
    ids = np.full((len(sequences), width), pad_id, dtype=np.int64)
    valid = np.zeros((len(sequences), width), dtype=bool)
    for row, seq in enumerate(sequences):
        ids[row, : len(seq)] = seq
        valid[row, : len(seq)] = True
    return ids, valid


def next_token_loss(
    model: LmModel,
    ids: np.ndarray,
    valid: np.ndarray,
    interventor: Interventor | None = None,
) -> tuple[Tensor, int]:
    """Mean cross-entropy of predicting each valid token from its prefix.

    Returns:
        tuple[Tensor, int]: The scalar loss and the number of predicted tokens.
    """
    targets = np.zeros_like(ids)
    targets[:, :-1] = ids[:, 1:]
    mask = np.zeros_like(valid)
    mask[:, :-1] = valid[:, 1:]
    logits = model.forward(ids, interventor, intervene_from=0)
    return T.cross_entropy(logits, targets, mask), int(mask.sum())


def evaluate_loss(
    model: LmModel,
    sequences: Sequence[list[int]],
    batch_size: int = 64,
    interventor: Interventor | None = None,
) -> float:
    """Token-weighted mean next-token loss over `sequences`, without recording gradients.

    With an interventor, every position is rewritten, which is what a
    per-step last-token intervention amounts to under teacher forcing.
    """
    total, count = 0.0, 0
    with no_grad():
        for begin in range(0, len(sequences), batch_size):
            ids, valid = pad_batch(sequences[begin : begin + batch_size])
            loss, n = next_token_loss(model, ids, valid, interventor)
            total += loss.item() * n
            count += n
    return total / max(count, 1)


def train_lm(
    model_config: LmConfig,
    train_config: LmTrainConfig,
    train_sequences: Sequence[list[int]],
    heldout_sequences: Sequence[list[int]],
) -> tuple[LmModel, pd.DataFrame]:
    """Trains a fresh model on tokenized documents.

    Args:
        model_config (LmConfig): Architecture, including vocabulary size.
        train_config (LmTrainConfig): Optimizer and schedule.
        train_sequences (Sequence[list[int]]): Tokenized training documents.
        heldout_sequences (Sequence[list[int]]): Tokenized documents for the held-out loss.

    Returns:
        tuple[LmModel, pd.DataFrame]: The trained model and one log row per
        epoch (epoch 0 is the untrained model) with columns epoch, step,
        train_loss, heldout_loss, grad_norm.

    Raises:
        InputError: If there is nothing to train on.
        TrainingDivergedError: If the loss becomes non-finite.
    """
    train_sequences = [s for s in train_sequences if len(s) > 1]
    if not train_sequences:
        raise InputError("training corpus is empty")
    model = LmModel(model_config)
    optimizer = Adam(model.parameters(), lr=train_config.lr, clip_grad=train_config.clip_grad)

    rows = [
        {
            "epoch": 0,
            "step": 0,
            "train_loss": evaluate_loss(model, train_sequences),
            "heldout_loss": evaluate_loss(model, heldout_sequences),
            "grad_norm": float("nan"),
        },
    ]
    step = 0
    for epoch in range(1, train_config.epochs + 1):
        order = np.random.default_rng((train_config.seed, epoch)).permutation(len(train_sequences))
        losses, norms = [], []
        for begin in range(0, len(order), train_config.batch_size):
            batch = [train_sequences[i] for i in order[begin : begin + train_config.batch_size]]
            ids, valid = pad_batch(batch)
            loss, _ = next_token_loss(model, ids, valid)
            step += 1
            if not np.isfinite(loss.item()):
                raise TrainingDivergedError("language model", step)
            optimizer.zero_grad()
            loss.backward()
            norms.append(optimizer.step())
            losses.append(loss.item())
        rows.append(
            {
                "epoch": epoch,
                "step": step,
                "train_loss": float(np.mean(losses)),
                "heldout_loss": evaluate_loss(model, heldout_sequences),
                "grad_norm": float(np.mean(norms)),
            },
        )
    return model, pd.DataFrame(rows)
