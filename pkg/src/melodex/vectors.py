"""Dense embedding tables and the three similarity retrieval paths.

Tables are immutable after load and searched by exact full scan. Text
and item queries rank by cosine similarity; user queries rank by raw
dot product, which is the score the pairwise-ranking trainer optimizes.
Query encoders are pluggable providers keyed by (modality, table) so
cross-modal lookups are an explicit registration, never an accident.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np
import requests

from .bm25 import tokenize
from .errors import MelodexError

TEXT_QUERY_MODALITIES = ("text", "audio", "image")
ITEM_QUERY_MODALITIES = ("audio", "image", "cf")
TEXT_VECTOR_DBS = ("metadata", "lyrics", "attributes", "audio", "image")
ITEM_VECTOR_DBS = ("audio", "image", "cf")


class VectorError(MelodexError):
    pass


class UnknownSpaceError(VectorError):
    pass


class UnknownVectorIdError(VectorError):
    pass


class ProviderError(VectorError):
    pass


class EmbeddingTable:
    """Fixed set of (id, vector) rows sharing one dimension."""

    def __init__(self, space: str, entries: Mapping[str, Sequence[float]]):
        if not entries:
            raise VectorError(f"embedding table {space!r} is empty")
        self.space = space
        self.ids: tuple[str, ...] = tuple(sorted(entries))
        self.dimension = len(next(iter(entries.values())))
        if self.dimension < 1:
            raise VectorError(f"table {space!r} has zero-dimensional vectors")
        matrix = np.empty((len(self.ids), self.dimension), dtype=np.float64)
        for row, entry_id in enumerate(self.ids):
            vector = np.asarray(entries[entry_id], dtype=np.float64)
            if vector.shape != (self.dimension,):
                raise VectorError(
                    f"vector for id {entry_id!r} has length {vector.shape[0] if vector.ndim == 1 else '?'}, "
                    f"expected {self.dimension}"
                )
            if not np.all(np.isfinite(vector)):
                raise VectorError(f"vector for id {entry_id!r} has non-finite components")
            matrix[row] = vector
        self.matrix = matrix
        self.matrix.setflags(write=False)
        self._row_of = {entry_id: row for row, entry_id in enumerate(self.ids)}
        self.norms = np.linalg.norm(matrix, axis=1)
        self.norms.setflags(write=False)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._row_of

    def get(self, entry_id: str) -> np.ndarray:
        row = self._row_of.get(entry_id)
        if row is None:
            raise UnknownVectorIdError(
                f"id {entry_id!r} not present in the {self.space!r} table"
            )
        return self.matrix[row].copy()


def load_embedding_records(lines: Iterable[str]) -> dict[str, list[float]]:
    """Parse JSONL records {"id": ..., "vector": [...]}, checking shape."""
    entries: dict[str, list[float]] = {}
    dimension: int | None = None
    for number, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            raise VectorError(f"line {number}: blank line in embedding file")
        try:
            record = json.loads(text)
        except json.JSONDecodeError as exc:
            raise VectorError(f"line {number}: invalid JSON ({exc.msg})") from None
        if not isinstance(record, dict) or "id" not in record or "vector" not in record:
            raise VectorError(f"line {number}: expected an object with id and vector")
        entry_id = record["id"]
        vector = record["vector"]
        if not isinstance(entry_id, str) or not entry_id:
            raise VectorError(f"line {number}: id must be a non-empty string")
        if entry_id in entries:
            raise VectorError(f"line {number}: duplicate id {entry_id!r}")
        if (
            not isinstance(vector, list)
            or not vector
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in vector)
        ):
            raise VectorError(f"line {number}: vector for {entry_id!r} must be a list of numbers")
        if dimension is None:
            dimension = len(vector)
        elif len(vector) != dimension:
            raise VectorError(
                f"line {number}: vector for {entry_id!r} has length {len(vector)}, expected {dimension}"
            )
        entries[entry_id] = [float(x) for x in vector]
    return entries


def load_embedding_table(path: str, space: str) -> EmbeddingTable:
    with open(path, encoding="utf-8") as handle:
        return EmbeddingTable(space, load_embedding_records(handle))


def _ranked(
    table: EmbeddingTable,
    scores: np.ndarray,
    topk: int,
    exclude: set[str] | frozenset[str] | None,
) -> list[tuple[str, float]]:
    excluded = exclude or frozenset()
    pairs = [
        (entry_id, float(score))
        for entry_id, score in zip(table.ids, scores)
        if entry_id not in excluded
    ]
    pairs.sort(key=lambda pair: (-pair[1], pair[0]))
    return pairs[:topk]


def _check_query(table: EmbeddingTable, query_vector: np.ndarray, topk: int) -> np.ndarray:
    if topk < 1:
        raise VectorError("topk must be >= 1")
    query = np.asarray(query_vector, dtype=np.float64)
    if query.shape != (table.dimension,):
        raise VectorError(
            f"query vector has shape {query.shape}, table {table.space!r} "
            f"expects ({table.dimension},)"
        )
    if not np.all(np.isfinite(query)):
        raise VectorError("query vector has non-finite components")
    return query


def cosine_topk(
    table: EmbeddingTable,
    query_vector: np.ndarray,
    topk: int,
    exclude: set[str] | None = None,
) -> list[tuple[str, float]]:
    """Exact cosine search; ties break by id ascending.

    Stored zero vectors score 0. A zero-norm query is an error because
    its direction is undefined.
    """
    query = _check_query(table, query_vector, topk)
    query_norm = float(np.linalg.norm(query))
    if query_norm == 0.0:
        raise VectorError("query vector has zero norm")
    safe_norms = np.where(table.norms == 0.0, 1.0, table.norms)
    scores = (table.matrix @ query) / (safe_norms * query_norm)
    return _ranked(table, scores, topk, exclude)


def dot_topk(
    table: EmbeddingTable,
    query_vector: np.ndarray,
    topk: int,
    exclude: set[str] | None = None,
) -> list[tuple[str, float]]:
    """Exact inner-product search; ties break by id ascending."""
    query = _check_query(table, query_vector, topk)
    scores = table.matrix @ query
    return _ranked(table, scores, topk, exclude)


class EmbeddingProvider(Protocol):
    def embed(self, query: str, space: str) -> np.ndarray: ...


class HashingEmbedder:
    """Deterministic stand-in encoder: seeded token hashing.

    Each (space, token) pair maps to a fixed Gaussian vector drawn from
    a hash-seeded generator; a query embeds as the normalized sum of
    its token vectors. Overlapping vocabulary therefore yields high
    cosine similarity, which is enough structure for fixtures and
    offline runs with no external model.
    """

    def __init__(self, dimension: int = 64, seed: int = 0):
        if dimension < 1:
            raise VectorError("dimension must be >= 1")
        self.dimension = dimension
        self.seed = seed
        self._token_cache: dict[tuple[str, str], np.ndarray] = {}

    def _token_vector(self, space: str, token: str) -> np.ndarray:
        key = (space, token)
        cached = self._token_cache.get(key)
        if cached is None:
            digest = hashlib.sha256(f"{self.seed}:{space}:{token}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            cached = rng.standard_normal(self.dimension)
            self._token_cache[key] = cached
        return cached

    def embed(self, query: str, space: str) -> np.ndarray:
        total = np.zeros(self.dimension, dtype=np.float64)
        for token in tokenize(query):
            total += self._token_vector(space, token)
        norm = np.linalg.norm(total)
        if norm > 0.0:
            total = total / norm
        return total


class HttpEmbedder:
    """Client for an external encoder: POST {query, space} -> {vector}."""

    def __init__(self, url: str, timeout: float = 10.0):
        self.url = url
        self.timeout = timeout

    def embed(self, query: str, space: str) -> np.ndarray:
        try:
            response = requests.post(
                self.url, json={"query": query, "space": space}, timeout=self.timeout
            )
            response.raise_for_status()
            payload = response.json()
        except requests.RequestException as exc:
            raise ProviderError(f"embedding request for space {space!r} failed: {exc}") from exc
        vector = payload.get("vector") if isinstance(payload, dict) else None
        if not isinstance(vector, list):
            raise ProviderError(f"embedding response for space {space!r} has no vector")
        return np.asarray(vector, dtype=np.float64)


class ProviderRegistry:
    """Maps (modality_type, vector_db_type) pairs to query encoders."""

    def __init__(self):
        self._providers: dict[tuple[str, str], EmbeddingProvider] = {}

    def register(
        self, modality_type: str, vector_db_type: str, provider: EmbeddingProvider
    ) -> None:
        self._providers[(modality_type, vector_db_type)] = provider

    def resolve(self, modality_type: str, vector_db_type: str) -> EmbeddingProvider:
        provider = self._providers.get((modality_type, vector_db_type))
        if provider is None:
            raise UnknownSpaceError(
                f"no embedding provider registered for modality {modality_type!r} "
                f"against the {vector_db_type!r} table"
            )
        return provider


@dataclass
class VectorStores:
    """All loaded tables: item vectors per corpus plus cf user vectors."""

    item_tables: dict[str, EmbeddingTable] = field(default_factory=dict)
    user_table: EmbeddingTable | None = None

    def item_table(self, vector_db_type: str) -> EmbeddingTable:
        table = self.item_tables.get(vector_db_type)
        if table is None:
            raise UnknownSpaceError(f"no {vector_db_type!r} vector table loaded")
        return table


def text_to_item(
    providers: ProviderRegistry,
    stores: VectorStores,
    query: str,
    modality_type: str,
    vector_db_type: str,
    topk: int,
) -> list[str]:
    """Embed a text query and rank tracks by cosine similarity."""
    if modality_type not in TEXT_QUERY_MODALITIES:
        raise UnknownSpaceError(f"unknown query modality {modality_type!r}")
    if vector_db_type not in TEXT_VECTOR_DBS:
        raise UnknownSpaceError(f"text queries cannot target the {vector_db_type!r} table")
    table = stores.item_table(vector_db_type)
    provider = providers.resolve(modality_type, vector_db_type)
    try:
        query_vector = np.asarray(provider.embed(query, f"{modality_type}:{vector_db_type}"))
    except VectorError:
        raise
    except Exception as exc:
        raise ProviderError(
            f"provider failed for modality {modality_type!r} "
            f"against the {vector_db_type!r} table: {exc}"
        ) from exc
    if query_vector.shape == (table.dimension,) and not query_vector.any():
        raise VectorError(f"query {query!r} embedded to a zero vector")
    return [entry_id for entry_id, _ in cosine_topk(table, query_vector, topk)]


def item_to_item(
    stores: VectorStores,
    track_id: str,
    modality_type: str,
    vector_db_type: str,
    topk: int,
) -> list[str]:
    """Rank tracks by cosine similarity to a stored track vector.

    The seed track never appears in its own results. The modality must
    match the table because stored vectors cannot be re-encoded across
    spaces.
    """
    if modality_type not in ITEM_QUERY_MODALITIES:
        raise UnknownSpaceError(f"unknown item modality {modality_type!r}")
    if vector_db_type not in ITEM_VECTOR_DBS:
        raise UnknownSpaceError(f"item queries cannot target the {vector_db_type!r} table")
    if modality_type != vector_db_type:
        raise UnknownSpaceError(
            f"stored {modality_type!r} vectors cannot be searched against "
            f"the {vector_db_type!r} table"
        )
    table = stores.item_table(vector_db_type)
    seed = table.get(track_id)
    if not seed.any():
        raise VectorError(f"track {track_id!r} has a zero vector in {vector_db_type!r}")
    return [
        entry_id
        for entry_id, _ in cosine_topk(table, seed, topk, exclude={track_id})
    ]


def user_to_item(stores: VectorStores, user_id: str, topk: int) -> list[str]:
    """Rank tracks by dot product with a trained user vector."""
    if stores.user_table is None:
        raise UnknownSpaceError("no user vector table loaded")
    user_vector = stores.user_table.get(user_id)
    item_table = stores.item_table("cf")
    return [entry_id for entry_id, _ in dot_topk(item_table, user_vector, topk)]
