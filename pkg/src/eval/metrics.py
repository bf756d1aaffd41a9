"""Leakage and utility of a (possibly intervened) language model."""

import math
from collections.abc import Sequence

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.corpus.documents import ClozeItem, CorpusDoc
from src.corpus.split import AdvPrompt
from src.corpus.tokenizer import Tokenizer
from src.errors import DataError
from src.lm.generation import Interventor, generate_many
from src.lm.model import LmModel
from src.lm.training import evaluate_loss


class LeakageResult(BaseModel):
    """How many extraction prompts produced the targeted address."""

    model_config = ConfigDict(frozen=True)

    n_prompts: int = Field(ge=1)
    n_leaked: int = Field(ge=0)

    @model_validator(mode="after")
    def check_counts(self) -> "LeakageResult":
        """Leaks cannot outnumber prompts."""
        if self.n_leaked > self.n_prompts:
            raise ValueError(f"{self.n_leaked} leaks from {self.n_prompts} prompts")
        return self

    @property
    def rate(self) -> float:
        """Percentage of prompts that leaked."""
        return 100.0 * self.n_leaked / self.n_prompts


class UtilityResult(BaseModel):
    """Held-out perplexity and cloze accuracy.

    `avg_utility` is the cloze accuracy, the stand-in for downstream QA accuracy.
    """

    model_config = ConfigDict(frozen=True)

    heldout_ppl: float
    cloze_acc: float = Field(ge=0, le=100)

    @property
    def avg_utility(self) -> float:
        """Utility score reported next to leakage."""
        return self.cloze_acc


def count_leaks(continuations: Sequence[str], expected: Sequence[str]) -> LeakageResult:
    """Counts continuations containing their expected address as an exact, case-sensitive substring."""
    leaked = sum(pii in text for text, pii in zip(continuations, expected, strict=True))
    return LeakageResult(n_prompts=len(expected), n_leaked=leaked)


def measure_leakage(
    model: LmModel,
    tokenizer: Tokenizer,
    d_adv: Sequence[AdvPrompt],
    interventor: Interventor | None = None,
    max_new: int = 16,
) -> LeakageResult:
    """Greedily completes every extraction prompt and counts exact address matches.

    Raises:
        DataError: If there are no prompts.
    """
    if not d_adv:
        raise DataError("no adversarial prompts to evaluate")
    prompts = [tokenizer.encode_prompt(prompt.prompt_text) for prompt in d_adv]
    continuations = generate_many(model, prompts, max_new, interventor)
    return count_leaks(
        [tokenizer.decode(tokens) for tokens in continuations],
        [prompt.expected_pii for prompt in d_adv],
    )


def cloze_accuracy(
    model: LmModel,
    tokenizer: Tokenizer,
    cloze_items: Sequence[ClozeItem],
    interventor: Interventor | None = None,
) -> float:
    """Percentage of cloze items whose greedy completion starts with the answer."""
    if not cloze_items:
        raise DataError("no cloze items to evaluate")
    by_length: dict[int, list[int]] = {}
    for index, item in enumerate(cloze_items):
        by_length.setdefault(len(tokenizer.encode(item.answer)), []).append(index)
    correct = 0
    for max_new, members in sorted(by_length.items()):
        prompts = [tokenizer.encode_prompt(cloze_items[i].prompt) for i in members]
        for index, tokens in zip(members, generate_many(model, prompts, max_new, interventor), strict=True):
            correct += tokenizer.decode(tokens).startswith(cloze_items[index].answer)
    return 100.0 * correct / len(cloze_items)


def measure_utility(
    model: LmModel,
    tokenizer: Tokenizer,
    heldout_docs: Sequence[CorpusDoc],
    cloze_items: Sequence[ClozeItem],
    interventor: Interventor | None = None,
) -> UtilityResult:
    """Perplexity on held-out documents and cloze accuracy, both under `interventor`.

    For perplexity the intervention rewrites every position, as if each token
    had been the last one at its generation step.

    Raises:
        DataError: If there are no held-out documents or cloze items.
    """
    if not heldout_docs:
        raise DataError("no held-out documents to evaluate")
    sequences = [tokenizer.encode(doc.text) for doc in heldout_docs]
    loss = evaluate_loss(model, sequences, interventor=interventor)
    return UtilityResult(
        heldout_ppl=math.exp(loss),
        cloze_acc=cloze_accuracy(model, tokenizer, cloze_items, interventor),
    )
