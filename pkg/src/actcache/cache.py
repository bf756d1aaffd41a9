"""Per-token residual activations harvested from the language model.

A cache file starts with one JSON header line (format, layer, d_emb, count,
corpus and model hashes) followed by fixed-width little-endian records:
int64 doc_id, int64 token_index, float64[d_emb] vector.
"""

import dataclasses
import json
from collections.abc import Iterator, Sequence
from pathlib import Path

import numpy as np

from src.errors import ConsistencyError, InputError, ParameterError, UnknownDocumentError
from src.lm.model import LmModel
from src.numerics.tensor import no_grad

FORMAT = "leakguard-actcache/1"


def record_dtype(d_emb: int) -> np.dtype:
    """The on-disk record layout for vectors of width `d_emb`."""
    return np.dtype([("doc_id", "<i8"), ("token_index", "<i8"), ("vector", "<f8", (d_emb,))])


@dataclasses.dataclass
class ActCache:
    """Residual vectors at one layer, ordered by document then token.

    Attributes:
        layer (int): Block whose output was recorded.
        doc_ids (np.ndarray): int64 [n] document id of each record.
        token_index (np.ndarray): int64 [n] position of each record within its document.
        vectors (np.ndarray): float64 [n, d_emb] residual vectors.
        corpus_hash (str): Fingerprint of the documents harvested.
        model_hash (str): Fingerprint of the producing model checkpoint.
    """

    layer: int
    doc_ids: np.ndarray
    token_index: np.ndarray
    vectors: np.ndarray
    corpus_hash: str = ""
    model_hash: str = ""
    doc_index: dict[int, tuple[int, int]] = dataclasses.field(init=False, repr=False)

    def __post_init__(self) -> None:
        """Indexes the contiguous record range of every document.

        Raises:
            InputError: If a vector is not finite.
            ConsistencyError: If a document's records are not contiguous.
        """
        if not np.all(np.isfinite(self.vectors)):
            raise InputError(f"activation cache for layer {self.layer} contains non-finite values")
        self.doc_index = {}
        if len(self.doc_ids) == 0:
            return
        boundaries = np.flatnonzero(np.diff(self.doc_ids)) + 1
        starts = np.concatenate([[0], boundaries])
        stops = np.concatenate([boundaries, [len(self.doc_ids)]])
        for start, stop in zip(starts, stops, strict=True):
            doc_id = int(self.doc_ids[start])
            if doc_id in self.doc_index:
                raise ConsistencyError(
                    f"doc {doc_id} appears in two separate runs of the layer {self.layer} cache",
                )
            self.doc_index[doc_id] = (int(start), int(stop))

    def __len__(self) -> int:
        """Number of records."""
        return len(self.doc_ids)

    @property
    def d_emb(self) -> int:
        """Width of the stored vectors."""
        return self.vectors.shape[1]

    def doc_vectors(self, doc_id: int) -> np.ndarray:
        """The [tokens, d_emb] vectors of one document.

        Raises:
            UnknownDocumentError: If the document is not in the cache.
        """
        if doc_id not in self.doc_index:
            raise UnknownDocumentError(f"doc {doc_id} is not in the layer {self.layer} cache")
        start, stop = self.doc_index[doc_id]
        return self.vectors[start:stop]


def harvest_layers(
    model: LmModel,
    docs: Sequence[tuple[int, list[int]]],
    layers: Sequence[int],
) -> dict[int, ActCache]:
    """Runs every document once and records the residual stream at several layers.

    Documents are run one at a time, so each vector is bit-identical to what
    `forward_with_hooks` returns for that document.

    Args:
        model (LmModel): The language model.
        docs (Sequence[tuple[int, list[int]]]): (doc_id, token ids) pairs, in the order to store.
        layers (Sequence[int]): Blocks to record.

    Returns:
        dict[int, ActCache]: One cache per layer.

    Raises:
        InputError: If a layer is invalid, or a document is empty or longer
            than the context (naming the doc id).
    """
    for layer in layers:
        model.check_layer(layer)
    chunks: dict[int, list[np.ndarray]] = {layer: [] for layer in layers}
    doc_ids, token_index = [], []
    with no_grad():
        for doc_id, tokens in docs:
            if not tokens or len(tokens) > model.config.context_length:
                raise InputError(
                    f"doc {doc_id} has {len(tokens)} tokens; expected 1..{model.config.context_length}",
                )
            _, captured = model.residuals(np.asarray([tokens]), layers)
            for layer in layers:
                chunks[layer].append(captured[layer][0])
            doc_ids.append(np.full(len(tokens), doc_id, dtype=np.int64))
            token_index.append(np.arange(len(tokens), dtype=np.int64))

    d_emb = model.config.d_emb
    all_doc_ids = np.concatenate(doc_ids) if doc_ids else np.zeros(0, dtype=np.int64)
    all_token_index = np.concatenate(token_index) if token_index else np.zeros(0, dtype=np.int64)
    return {
        layer: ActCache(
            layer=layer,
            doc_ids=all_doc_ids,
            token_index=all_token_index,
            vectors=np.concatenate(chunks[layer]) if chunks[layer] else np.zeros((0, d_emb)),
        )
        for layer in layers
    }


def harvest(model: LmModel, docs: Sequence[tuple[int, list[int]]], layer: int) -> ActCache:
    """Records one vector per (document, token) at `layer`; see `harvest_layers`."""
    return harvest_layers(model, docs, [layer])[layer]


def mean_pool(cache: ActCache, doc_id: int) -> np.ndarray:
    """Mean residual vector over a document's tokens.

    Raises:
        UnknownDocumentError: If the document is not in the cache.
    """
    return cache.doc_vectors(doc_id).mean(axis=0)


def stream_batches(
    cache: ActCache,
    batch_size: int,
    shuffle_seed: int | tuple[int, ...] | None,
) -> Iterator[np.ndarray]:
    """Yields every record's vector exactly once, in [batch, d_emb] chunks.

    Args:
        cache (ActCache): Source records.
        batch_size (int): Rows per batch; the last batch may be smaller.
        shuffle_seed (int | tuple[int, ...] | None): Seed for the record order, or None for storage order.

    Raises:
        ParameterError: If batch_size < 1.
    """
    if batch_size < 1:
        raise ParameterError(f"batch_size must be positive, got {batch_size}")
    order = (
        np.arange(len(cache))
        if shuffle_seed is None
        else np.random.default_rng(shuffle_seed).permutation(len(cache))
    )
    for begin in range(0, len(order), batch_size):
        yield cache.vectors[order[begin : begin + batch_size]]


def write_cache(cache: ActCache, path: Path) -> None:
    """Writes a cache file: JSON header line, then packed records."""
    header = {
        "format": FORMAT,
        "layer": cache.layer,
        "d_emb": cache.d_emb,
        "count": len(cache),
        "corpus_hash": cache.corpus_hash,
        "model_hash": cache.model_hash,
    }
    records = np.zeros(len(cache), dtype=record_dtype(cache.d_emb))
    records["doc_id"] = cache.doc_ids
    records["token_index"] = cache.token_index
    records["vector"] = cache.vectors
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        f.write(records.tobytes())


def read_cache(path: Path) -> ActCache:
    """Reads a cache file written by `write_cache`.

    Raises:
        InputError: If the header is malformed or the record count does not match.
    """
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise InputError(f"{path} has no header line")
    header = json.loads(raw[:newline].decode("utf-8"))
    if header.get("format") != FORMAT:
        raise InputError(f"{path} is not an activation cache")
    dtype = record_dtype(header["d_emb"])
    body = raw[newline + 1 :]
    if len(body) % dtype.itemsize:
        raise InputError(f"{path} ends in a partial record")
    records = np.frombuffer(body, dtype=dtype)
    if len(records) != header["count"]:
        raise InputError(f"{path} holds {len(records)} records, header says {header['count']}")
    return ActCache(
        layer=header["layer"],
        doc_ids=records["doc_id"].astype(np.int64),
        token_index=records["token_index"].astype(np.int64),
        vectors=records["vector"].astype(np.float64),
        corpus_hash=header["corpus_hash"],
        model_hash=header["model_hash"],
    )
