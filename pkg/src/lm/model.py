"""A small pre-norm decoder-only transformer with residual-stream hooks.

The model keeps its parameters as leaf `Tensor`s in declaration order so they
can be optimized, checkpointed, and reloaded. The forward pass is split into
`embed`, `run_blocks` and `unembed` so callers can stop after any block, read
or replace the residual stream, and resume.
"""

from __future__ import annotations

import dataclasses
import math
from typing import TYPE_CHECKING

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import InputError
from src.numerics import tensor as T
from src.numerics.tensor import Tensor, no_grad
from src.utils.checkpoint import load_checkpoint, save_checkpoint

if TYPE_CHECKING:
    from collections.abc import Sequence
    from pathlib import Path

    from src.lm.generation import Interventor

INIT_STD = 0.02


class LmConfig(BaseModel):
    """Architecture of the language model.

    Attributes:
        vocab_size (int): Number of token ids, including padding.
        d_emb (int): Residual stream width.
        n_layers (int): Number of transformer blocks.
        n_heads (int): Attention heads per block.
        context_length (int): Maximum sequence length.
        seed (int): Seed for parameter initialization.
    """

    model_config = ConfigDict(extra="forbid")

    vocab_size: int = Field(default=0, ge=0)
    d_emb: int = Field(default=64, ge=1)
    n_layers: int = Field(default=6, ge=1)
    n_heads: int = Field(default=4, ge=1)
    context_length: int = 64
    seed: int = 0

    @model_validator(mode="after")
    def check_shape(self) -> LmConfig:
        """Heads must split the residual width evenly and the context is fixed at 64."""
        if self.d_emb % self.n_heads:
            raise ValueError(f"d_emb {self.d_emb} is not divisible by n_heads {self.n_heads}")
        if self.context_length != 64:
            raise ValueError(f"context_length must be 64, got {self.context_length}")
        return self


@dataclasses.dataclass(frozen=True)
class HookPoint:
    """The residual stream right after block `layer`."""

    layer: int


@dataclasses.dataclass(frozen=True)
class ResidualActivation:
    """One token's residual vector at a hook point."""

    layer: int
    token_index: int
    vector: np.ndarray


class LmModel:
    """Decoder-only transformer with learned positions and a tied unembedding."""

    def __init__(self, config: LmConfig, params: dict[str, Tensor] | None = None) -> None:
        """Initializes the model, randomly unless `params` are given.

        Args:
            config (LmConfig): Architecture; `vocab_size` must be positive.
            params (dict[str, Tensor] | None): Parameters in declaration order, e.g. from a checkpoint.

        Raises:
            InputError: If the vocabulary is empty or `params` do not match the architecture.
        """
        if config.vocab_size < 1:
            raise InputError("vocab_size must be set before building a model")
        self.config = config
        expected = self.parameter_shapes(config)
        if params is None:
            params = self._init_params(config, expected)
        if list(params) != list(expected) or any(
            params[name].shape != shape for name, shape in expected.items()
        ):
            raise InputError("parameters do not match the model configuration")
        self.params = params

    @staticmethod
    def parameter_shapes(config: LmConfig) -> dict[str, tuple[int, ...]]:
        """Names and shapes of every parameter in declaration order."""
        d, v = config.d_emb, config.vocab_size
        shapes: dict[str, tuple[int, ...]] = {
            "tok_emb": (v, d),
            "pos_emb": (config.context_length, d),
        }
        for i in range(config.n_layers):
            shapes |= {
                f"blocks.{i}.ln1.gamma": (d,),
                f"blocks.{i}.ln1.beta": (d,),
                f"blocks.{i}.attn.w_qkv": (d, 3 * d),
                f"blocks.{i}.attn.b_qkv": (3 * d,),
                f"blocks.{i}.attn.w_out": (d, d),
                f"blocks.{i}.attn.b_out": (d,),
                f"blocks.{i}.ln2.gamma": (d,),
                f"blocks.{i}.ln2.beta": (d,),
                f"blocks.{i}.mlp.w_in": (d, 4 * d),
                f"blocks.{i}.mlp.b_in": (4 * d,),
                f"blocks.{i}.mlp.w_out": (4 * d, d),
                f"blocks.{i}.mlp.b_out": (d,),
            }
        shapes |= {"ln_f.gamma": (d,), "ln_f.beta": (d,)}
        return shapes

    @staticmethod
    def _init_params(config: LmConfig, shapes: dict[str, tuple[int, ...]]) -> dict[str, Tensor]:
        rng = np.random.default_rng(config.seed)
        residual_std = INIT_STD / math.sqrt(2 * config.n_layers)
        params = {}
        for name, shape in shapes.items():
            if name.endswith("gamma"):
                data = np.ones(shape)
            elif name.endswith(("beta", "b_qkv", "b_out", "b_in")):
                data = np.zeros(shape)
            elif name.endswith("w_out"):
                data = rng.normal(0.0, residual_std, size=shape)
            else:
                data = rng.normal(0.0, INIT_STD, size=shape)
            params[name] = Tensor(data, requires_grad=True)
        return params

    def parameters(self) -> list[Tensor]:
        """All parameters in declaration order."""
        return list(self.params.values())

    # --Forward pieces---------------------------------------------------------

    def check_tokens(self, ids: np.ndarray) -> np.ndarray:
        """Validates a [batch, time] array of token ids.

        Raises:
            InputError: If the sequence is too long or an id is outside the vocabulary.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2:
            raise InputError(f"token ids must be [batch, time], got shape {ids.shape}")
        if ids.shape[1] > self.config.context_length:
            raise InputError(
                f"sequence of {ids.shape[1]} tokens exceeds context length {self.config.context_length}",
            )
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise InputError(f"token id out of vocabulary range [0, {self.config.vocab_size})")
        return ids

    def check_layer(self, layer: int) -> int:
        """Validates a block index.

        Raises:
            InputError: If `layer` is not in [0, n_layers).
        """
        if not 0 <= layer < self.config.n_layers:
            raise InputError(f"layer {layer} outside [0, {self.config.n_layers})")
        return layer

    def embed(self, ids: np.ndarray) -> Tensor:
        """Token plus position embeddings, shape [batch, time, d_emb]."""
        ids = self.check_tokens(ids)
        positions = np.arange(ids.shape[1])
        return T.embedding(self.params["tok_emb"], ids) + T.embedding(self.params["pos_emb"], positions)

    def block(self, x: Tensor, layer: int) -> Tensor:
        """Applies block `layer`: causal self-attention then MLP, each pre-normed and residual."""
        p = self.params
        pre = f"blocks.{layer}"
        batch, time, d = x.shape
        heads = self.config.n_heads
        head_dim = d // heads

        h = T.layer_norm(x, p[f"{pre}.ln1.gamma"], p[f"{pre}.ln1.beta"])
        qkv = T.matmul(h, p[f"{pre}.attn.w_qkv"]) + p[f"{pre}.attn.b_qkv"]
        qkv = T.transpose(T.reshape(qkv, (batch, time, 3, heads, head_dim)), (2, 0, 3, 1, 4))
        q, k, v = (_take(qkv, i) for i in range(3))
        scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(head_dim))
        causal = np.tril(np.ones((time, time), dtype=bool))
        attended = T.matmul(T.softmax(scores, causal), v)
        merged = T.reshape(T.transpose(attended, (0, 2, 1, 3)), (batch, time, d))
        x = x + T.matmul(merged, p[f"{pre}.attn.w_out"]) + p[f"{pre}.attn.b_out"]

        h = T.layer_norm(x, p[f"{pre}.ln2.gamma"], p[f"{pre}.ln2.beta"])
        h = T.gelu(T.matmul(h, p[f"{pre}.mlp.w_in"]) + p[f"{pre}.mlp.b_in"])
        return x + T.matmul(h, p[f"{pre}.mlp.w_out"]) + p[f"{pre}.mlp.b_out"]

    def run_blocks(self, x: Tensor, start: int, stop: int) -> Tensor:
        """Applies blocks start..stop-1 to the residual stream."""
        for layer in range(start, stop):
            x = self.block(x, layer)
        return x

    def unembed(self, x: Tensor) -> Tensor:
        """Final layer norm and tied unembedding, shape [batch, time, vocab]."""
        h = T.layer_norm(x, self.params["ln_f.gamma"], self.params["ln_f.beta"])
        return T.matmul(h, T.transpose(self.params["tok_emb"]))

    def forward(
        self,
        ids: np.ndarray,
        interventor: Interventor | None = None,
        intervene_from: int = 0,
    ) -> Tensor:
        """Computes next-token logits for a [batch, time] array of ids.

        Args:
            ids (np.ndarray): Token ids.
            interventor (Interventor | None): Replaces the residual stream after
                block `interventor.layer` at positions >= `intervene_from`.
            intervene_from (int): First intervened position.

        Returns:
            Tensor: Logits of shape [batch, time, vocab].
        """
        x = self.embed(ids)
        if interventor is None:
            return self.unembed(self.run_blocks(x, 0, self.config.n_layers))
        layer = self.check_layer(interventor.layer)
        x = self.run_blocks(x, 0, layer + 1)
        x = Tensor(apply_interventor(x.data, interventor, intervene_from))
        return self.unembed(self.run_blocks(x, layer + 1, self.config.n_layers))

    def residuals(
        self,
        ids: np.ndarray,
        layers: Sequence[int],
        interventor: Interventor | None = None,
        intervene_from: int = 0,
    ) -> tuple[Tensor, dict[int, np.ndarray]]:
        """Runs the model and captures the residual stream after each requested block.

        At the intervened layer the captured stream is the rewritten one.

        Returns:
            tuple[Tensor, dict[int, np.ndarray]]: Logits, and [batch, time, d_emb]
            copies of the residual stream keyed by layer.
        """
        wanted = {self.check_layer(layer) for layer in layers}
        target = None if interventor is None else self.check_layer(interventor.layer)
        captured: dict[int, np.ndarray] = {}
        x = self.embed(ids)
        for layer in range(self.config.n_layers):
            x = self.block(x, layer)
            if layer == target:
                x = Tensor(apply_interventor(x.data, interventor, intervene_from))
            if layer in wanted:
                captured[layer] = x.data.copy()
        return self.unembed(x), captured


def _take(x: Tensor, index: int) -> Tensor:
    """Selects x[index] along the first axis as a differentiable op."""

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.zeros_like(x.data)
        grad[index] = g
        return (grad,)

    return Tensor._result(x.data[index], (x,), backward, "take")


def apply_interventor(resid: np.ndarray, interventor: Interventor, start: int) -> np.ndarray:
    """Returns a copy of a [batch, time, d] residual array with positions >= start replaced."""
    out = resid.copy()
    tail = out[:, start:, :]
    replaced = interventor(tail.reshape(-1, tail.shape[-1]))
    out[:, start:, :] = replaced.reshape(tail.shape)
    return out


def forward_with_hooks(
    model: LmModel,
    tokens: list[int],
    hooks: list[HookPoint],
    interventor: Interventor | None = None,
    intervene_from: int = 0,
) -> tuple[np.ndarray, dict[HookPoint, list[ResidualActivation]]]:
    """Runs one sequence and records the residual stream at every hook.

    Args:
        model (LmModel): The language model.
        tokens (list[int]): Token ids, at most `context_length` of them.
        hooks (list[HookPoint]): Where to record.
        interventor (Interventor | None): Optional rewrite after block
            `interventor.layer`; hooks at that layer see the rewritten stream.
        intervene_from (int): First position the interventor rewrites.

    Returns:
        tuple: Logits of shape [time, vocab], and for each hook one
        `ResidualActivation` per token position.

    Raises:
        InputError: On an unknown token, an over-long sequence, or an invalid layer.
    """
    with no_grad():
        logits, captured = model.residuals(
            np.asarray([tokens]),
            [hook.layer for hook in hooks],
            interventor,
            intervene_from,
        )
    activations = {
        hook: [
            ResidualActivation(layer=hook.layer, token_index=t, vector=captured[hook.layer][0, t])
            for t in range(len(tokens))
        ]
        for hook in hooks
    }
    return logits.data[0], activations


def save_model(model: LmModel, path: Path) -> None:
    """Writes the model's configuration and parameters to a checkpoint file."""
    save_checkpoint(
        path,
        "lm",
        model.config.model_dump(),
        {name: p.data for name, p in model.params.items()},
    )


def load_model(path: Path) -> LmModel:
    """Rebuilds a model from a checkpoint written by `save_model`.

    Raises:
        InputError: If the file is not a language model checkpoint.
    """
    checkpoint = load_checkpoint(path, kind="lm")
    config = LmConfig.model_validate(checkpoint.config)
    params = {name: Tensor(data, requires_grad=True) for name, data in checkpoint.params.items()}
    return LmModel(config, params)
