"""Greedy decoding with an optional residual-stream intervention."""

from __future__ import annotations

import dataclasses
from collections import defaultdict
from collections.abc import Callable, Sequence

import numpy as np

from src.errors import InputError
from src.lm.model import LmModel
from src.numerics.tensor import no_grad


@dataclasses.dataclass(frozen=True)
class Interventor:
    """Replaces residual vectors after one block.

    Attributes:
        layer (int): Block after which the residual stream is rewritten.
        fn (Callable[[np.ndarray], np.ndarray]): Maps [n, d_emb] vectors to [n, d_emb] vectors.
        intervene_prefix (bool): Also rewrite every prompt position, not only the
            positions that were last at some generation step.
    """

    layer: int
    fn: Callable[[np.ndarray], np.ndarray]
    intervene_prefix: bool = False

    def __call__(self, vectors: np.ndarray) -> np.ndarray:
        """Applies `fn` to a single vector or a batch of row vectors."""
        if vectors.ndim == 1:
            return self.fn(vectors[None, :])[0]
        return self.fn(vectors)


def identity_interventor(layer: int) -> Interventor:
    """An interventor that leaves the residual stream unchanged."""
    return Interventor(layer=layer, fn=lambda vectors: vectors)


def generate(
    model: LmModel,
    prompt_tokens: list[int],
    max_new: int,
    interventor: Interventor | None = None,
) -> list[int]:
    """Greedily extends a prompt.

    Each step re-runs the whole sequence. Without `intervene_prefix`, the
    intervention covers the last prompt token and every generated token, which
    is exactly the set of positions that were the last token at some step.

    Args:
        model (LmModel): The language model.
        prompt_tokens (list[int]): Prompt ids; must fit in the context.
        max_new (int): Number of tokens to generate; decoding also stops when
            the context is full.
        interventor (Interventor | None): Optional residual rewrite.

    Returns:
        list[int]: The generated continuation only.
    """
    return generate_many(model, [prompt_tokens], max_new, interventor)[0]


def generate_many(
    model: LmModel,
    prompts: Sequence[list[int]],
    max_new: int,
    interventor: Interventor | None = None,
) -> list[list[int]]:
    """Greedily extends several prompts, batching prompts of equal length.

    Returns:
        list[list[int]]: One continuation per prompt, in input order.

    Raises:
        InputError: If a prompt is empty or does not fit in the context.
    """
    if max_new < 0:
        raise InputError(f"max_new must be non-negative, got {max_new}")
    by_length: dict[int, list[int]] = defaultdict(list)
    for index, prompt in enumerate(prompts):
        if not prompt:
            raise InputError(f"prompt {index} is empty")
        if len(prompt) > model.config.context_length:
            raise InputError(f"prompt {index} has {len(prompt)} tokens, context is {model.config.context_length}")
        by_length[len(prompt)].append(index)

    outputs: list[list[int]] = [[] for _ in prompts]
    for length in sorted(by_length):
        members = by_length[length]
        ids = np.asarray([prompts[i] for i in members], dtype=np.int64)
        start = 0 if interventor is not None and interventor.intervene_prefix else length - 1
        steps = min(max_new, model.config.context_length - length)
        with no_grad():
            for _ in range(steps):
                logits = model.forward(ids, interventor, intervene_from=start)
                next_ids = np.argmax(logits.data[:, -1, :], axis=-1)
                ids = np.concatenate([ids, next_ids[:, None]], axis=1)
        for row, index in enumerate(members):
            outputs[index] = ids[row, length:].tolist()
    return outputs
