"""Ranking SAE latents (or raw residual coordinates) by how strongly they respond to PII."""

import dataclasses
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np
import pandas as pd

from src.actcache.cache import ActCache, harvest
from src.corpus.split import PiiSpan
from src.errors import DataError, ParameterError
from src.lm.model import LmModel
from src.sae.sae import SaeParams, encode


@dataclasses.dataclass(frozen=True)
class FeatureRanking:
    """Coordinates ordered by summed activation magnitude, largest first.

    Equal magnitudes are ordered by ascending index.
    """

    indices: np.ndarray
    magnitudes: np.ndarray

    @classmethod
    def from_aggregates(cls, aggregates: np.ndarray) -> "FeatureRanking":
        """Ranks every coordinate of a magnitude vector."""
        order = np.lexsort((np.arange(len(aggregates)), -aggregates))
        return cls(indices=order.astype(np.int64), magnitudes=aggregates[order])

    def __len__(self) -> int:
        """Number of ranked coordinates."""
        return len(self.indices)

    def top(self, k: int) -> tuple[int, ...]:
        """The k highest-ranked indices, ascending.

        Raises:
            ParameterError: If k is outside [0, len(self)].
        """
        if not 0 <= k <= len(self):
            raise ParameterError(f"cannot take the top {k} of {len(self)} ranked features")
        return tuple(sorted(int(i) for i in self.indices[:k]))

    def to_frame(self) -> pd.DataFrame:
        """Two columns: index, aggregate."""
        return pd.DataFrame({"index": self.indices, "aggregate": self.magnitudes})

    def save(self, path: Path) -> None:
        """Writes the ranking as CSV."""
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def load(cls, path: Path) -> "FeatureRanking":
        """Reads a ranking written by `save`."""
        frame = pd.read_csv(path)
        return cls(
            indices=frame["index"].to_numpy(dtype=np.int64),
            magnitudes=frame["aggregate"].to_numpy(dtype=np.float64),
        )


def span_vectors(cache: ActCache, spans: Sequence[PiiSpan]) -> np.ndarray:
    """Stacks the residual vectors from each span's first address token through its last.

    Raises:
        DataError: If a span's document is missing or the span falls outside it.
    """
    rows = []
    for span in spans:
        if span.doc_id not in cache.doc_index:
            raise DataError(f"doc {span.doc_id} has no activations to rank")
        vectors = cache.doc_vectors(span.doc_id)
        if not 0 <= span.start <= span.end < len(vectors):
            raise DataError(
                f"doc {span.doc_id} has no email span at tokens {span.start}..{span.end}",
            )
        rows.append(vectors[span.start : span.end + 1])
    if not rows:
        raise DataError("no PII spans to rank")
    return np.concatenate(rows)


def rank_latents(params: SaeParams, cache: ActCache, spans: Sequence[PiiSpan]) -> FeatureRanking:
    """Ranks SAE latents by sum of |z| over every PII-span token of a cache."""
    return FeatureRanking.from_aggregates(np.abs(encode(params, span_vectors(cache, spans))).sum(axis=0))


def rank_neurons(cache: ActCache, spans: Sequence[PiiSpan]) -> FeatureRanking:
    """Ranks raw residual coordinates by sum of |a| over every PII-span token of a cache."""
    return FeatureRanking.from_aggregates(np.abs(span_vectors(cache, spans)).sum(axis=0))


def _span_docs(spans: Sequence[PiiSpan], tokens_by_doc: Mapping[int, list[int]]) -> list[tuple[int, list[int]]]:
    docs = []
    for span in spans:
        if span.doc_id not in tokens_by_doc:
            raise DataError(f"doc {span.doc_id} is not in the corpus")
        docs.append((span.doc_id, tokens_by_doc[span.doc_id]))
    return docs


def rank_pii_features(
    params: SaeParams,
    model: LmModel,
    d_topk: Sequence[PiiSpan],
    tokens_by_doc: Mapping[int, list[int]],
    layer: int,
) -> FeatureRanking:
    """Ranks SAE latents by their summed magnitude over the email tokens of `d_topk`.

    Args:
        params (SaeParams): The autoencoder at `layer`.
        model (LmModel): The language model.
        d_topk (Sequence[PiiSpan]): Email spans of the ranking documents.
        tokens_by_doc (Mapping[int, list[int]]): Token ids of every document.
        layer (int): Residual layer to read.

    Raises:
        DataError: If a document or its email span is missing.
    """
    cache = harvest(model, _span_docs(d_topk, tokens_by_doc), layer)
    return rank_latents(params, cache, d_topk)


def rank_pii_neurons(
    model: LmModel,
    d_topk: Sequence[PiiSpan],
    tokens_by_doc: Mapping[int, list[int]],
    layer: int,
) -> FeatureRanking:
    """Same aggregation as `rank_pii_features`, applied to raw residual coordinates."""
    cache = harvest(model, _span_docs(d_topk, tokens_by_doc), layer)
    return rank_neurons(cache, d_topk)
