"""Residual vector quantization and discrete-code retrieval.

Each modality gets its own 4-layer quantizer with 64 codes per layer,
trained by per-layer k-means on residuals. A track's semantic id is
the 4-tuple of greedy code assignments; an inverted index over code
positions serves exact and near-match lookup.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import MelodexError
from .vectors import EmbeddingTable

NUM_LAYERS = 4
CODES_PER_LAYER = 64
SID_MODALITIES = ("audio", "image", "metadata", "lyrics", "attributes", "cf_item")


class SemanticIdError(MelodexError):
    pass


@dataclass(frozen=True)
class RvqConfig:
    commitment_weight: float = 0.25
    kmeans_iters: int = 25
    rng_seed: int = 0

    def __post_init__(self):
        if self.commitment_weight < 0:
            raise SemanticIdError("commitment_weight must be >= 0")
        if self.kmeans_iters < 1:
            raise SemanticIdError("kmeans_iters must be >= 1")


@dataclass(frozen=True)
class RvqModel:
    modality: str
    codebooks: np.ndarray  # (NUM_LAYERS, CODES_PER_LAYER, dimension)
    layer_mse: tuple[float, ...]
    utilization: tuple[float, ...]
    commitment_weight: float

    def __post_init__(self):
        if self.modality not in SID_MODALITIES:
            raise SemanticIdError(f"unknown modality {self.modality!r}")
        if self.codebooks.shape[:2] != (NUM_LAYERS, CODES_PER_LAYER):
            raise SemanticIdError(
                f"codebooks must be {NUM_LAYERS}x{CODES_PER_LAYER}, "
                f"got {self.codebooks.shape[:2]}"
            )
        if not np.all(np.isfinite(self.codebooks)):
            raise SemanticIdError("codebooks contain non-finite values")

    @property
    def dimension(self) -> int:
        return self.codebooks.shape[2]


def _assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid per row; ties resolve to the lowest code index."""
    point_sq = np.sum(points * points, axis=1)[:, None]
    centroid_sq = np.sum(centroids * centroids, axis=1)[None, :]
    distances = point_sq - 2.0 * (points @ centroids.T) + centroid_sq
    return np.argmin(distances, axis=1)


def _kmeans_pp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; falls back to uniform picks once every point
    is at distance zero from a chosen seed (duplicate-heavy inputs)."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(0, n))
    centroids[0] = points[first]
    closest_sq = np.sum((points - centroids[0]) ** 2, axis=1)
    for position in range(1, k):
        total = float(closest_sq.sum())
        if total <= 0.0:
            pick = int(rng.integers(0, n))
        else:
            pick = int(rng.choice(n, p=closest_sq / total))
        centroids[position] = points[pick]
        candidate_sq = np.sum((points - centroids[position]) ** 2, axis=1)
        np.minimum(closest_sq, candidate_sq, out=closest_sq)
    return centroids


def _lloyd(
    points: np.ndarray, k: int, iters: int, rng: np.random.Generator
) -> np.ndarray:
    """Lloyd's iterations ending on a centroid update, so a fresh
    assignment afterwards can only lower the quantization error."""
    centroids = _kmeans_pp_seed(points, k, rng)
    for _ in range(iters):
        assignment = _assign(points, centroids)
        distances_sq = np.sum((points - centroids[assignment]) ** 2, axis=1)
        for code in range(k):
            members = assignment == code
            if members.any():
                centroids[code] = points[members].mean(axis=0)
            else:
                # Reseed dead codes to the worst-quantized points; if
                # everything is already exact, keep the old centroid.
                farthest = int(np.argmax(distances_sq))
                if distances_sq[farthest] > 0.0:
                    centroids[code] = points[farthest]
                    distances_sq[farthest] = 0.0
    return centroids


def train_rvq(
    modality: str, vectors: np.ndarray, config: RvqConfig = RvqConfig()
) -> RvqModel:
    """Fit the 4 codebooks layer by layer on residuals.

    Deterministic per seed. With fewer than 64 training vectors the
    seeding duplicates points and a warning is emitted; training still
    proceeds. Per-layer reconstruction MSE and code utilization are
    recorded on the model.
    """
    if modality not in SID_MODALITIES:
        raise SemanticIdError(f"unknown modality {modality!r}")
    points = np.asarray(vectors, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise SemanticIdError("training vectors must be a non-empty 2D array")
    if not np.all(np.isfinite(points)):
        raise SemanticIdError("training vectors contain non-finite values")
    if points.shape[0] < CODES_PER_LAYER:
        warnings.warn(
            f"only {points.shape[0]} vectors for {CODES_PER_LAYER} codes; "
            "codebooks will contain duplicate centroids",
            stacklevel=2,
        )
    rng = np.random.default_rng(config.rng_seed)
    residuals = points.copy()
    codebooks = np.empty((NUM_LAYERS, CODES_PER_LAYER, points.shape[1]), dtype=np.float64)
    layer_mse: list[float] = []
    utilization: list[float] = []
    for layer in range(NUM_LAYERS):
        codebooks[layer] = _lloyd(residuals, CODES_PER_LAYER, config.kmeans_iters, rng)
        assignment = _assign(residuals, codebooks[layer])
        residuals = residuals - codebooks[layer][assignment]
        layer_mse.append(float(np.mean(np.sum(residuals * residuals, axis=1))))
        utilization.append(len(np.unique(assignment)) / CODES_PER_LAYER)
    return RvqModel(
        modality=modality,
        codebooks=codebooks,
        layer_mse=tuple(layer_mse),
        utilization=tuple(utilization),
        commitment_weight=config.commitment_weight,
    )


def encode(model: RvqModel, vector: np.ndarray) -> tuple[int, int, int, int]:
    """Greedy residual assignment to one code per layer."""
    return encode_matrix(model, np.asarray(vector, dtype=np.float64)[None, :])[0]


def encode_matrix(model: RvqModel, vectors: np.ndarray) -> list[tuple[int, int, int, int]]:
    points = np.asarray(vectors, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != model.dimension:
        raise SemanticIdError(
            f"vectors must have dimension {model.dimension} for {model.modality!r}"
        )
    residuals = points.copy()
    codes = np.empty((points.shape[0], NUM_LAYERS), dtype=np.int64)
    for layer in range(NUM_LAYERS):
        assignment = _assign(residuals, model.codebooks[layer])
        codes[:, layer] = assignment
        residuals = residuals - model.codebooks[layer][assignment]
    return [tuple(int(code) for code in row) for row in codes]


def reconstruct(model: RvqModel, indices: Sequence[int]) -> np.ndarray:
    """Sum of the selected centroids across layers."""
    _check_indices(indices)
    total = np.zeros(model.dimension, dtype=np.float64)
    for layer, code in enumerate(indices):
        total += model.codebooks[layer][code]
    return total


def _check_indices(indices: Sequence[int]) -> tuple[int, ...]:
    values = tuple(indices)
    if len(values) != NUM_LAYERS:
        raise SemanticIdError(f"semantic id needs {NUM_LAYERS} indices, got {len(values)}")
    for code in values:
        if not isinstance(code, int) or isinstance(code, bool):
            raise SemanticIdError(f"semantic id indices must be integers, got {code!r}")
        if not 0 <= code < CODES_PER_LAYER:
            raise SemanticIdError(f"code {code} out of range [0, {CODES_PER_LAYER})")
    return values


def save_model(model: RvqModel, path: str) -> None:
    payload = {
        "modality": model.modality,
        "dimension": model.dimension,
        "layers": NUM_LAYERS,
        "codes_per_layer": CODES_PER_LAYER,
        "commitment_weight": model.commitment_weight,
        "layer_mse": list(model.layer_mse),
        "utilization": list(model.utilization),
        "codebooks": model.codebooks.tolist(),
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle)
        handle.write("\n")


def load_model(path: str) -> RvqModel:
    with open(path, encoding="utf-8") as handle:
        payload = json.load(handle)
    try:
        codebooks = np.asarray(payload["codebooks"], dtype=np.float64)
        model = RvqModel(
            modality=payload["modality"],
            codebooks=codebooks,
            layer_mse=tuple(payload["layer_mse"]),
            utilization=tuple(payload["utilization"]),
            commitment_weight=payload["commitment_weight"],
        )
    except (KeyError, TypeError) as exc:
        raise SemanticIdError(f"malformed model file {path!r}: {exc}") from None
    if payload.get("dimension") != model.dimension:
        raise SemanticIdError(f"model file {path!r} dimension header mismatch")
    return model


def encode_table(
    model: RvqModel,
    table: EmbeddingTable,
    expected_ids: Iterable[str] | None = None,
) -> dict[str, tuple[int, int, int, int]]:
    """Encode every row of a table, verifying coverage when asked."""
    if expected_ids is not None:
        missing = sorted(set(expected_ids) - set(table.ids))
        if missing:
            shown = ", ".join(missing[:5])
            raise SemanticIdError(
                f"{len(missing)} tracks lack a {model.modality!r} vector: {shown}"
            )
    codes = encode_matrix(model, table.matrix)
    return dict(zip(table.ids, codes))


def sidecar_line(track_id: str, modality: str, indices: Sequence[int]) -> str:
    """The canonical one-line rendering, reused verbatim in prompts."""
    return json.dumps(
        {"track_id": track_id, "modality": modality, "indices": list(indices)}
    )


def write_sidecar(
    path: str, encodings: Mapping[str, Mapping[str, Sequence[int]]]
) -> None:
    """Write {modality -> {track_id -> indices}} as one JSONL sidecar."""
    with open(path, "w", encoding="utf-8") as handle:
        for modality in sorted(encodings):
            per_track = encodings[modality]
            for track_id in sorted(per_track):
                handle.write(sidecar_line(track_id, modality, per_track[track_id]) + "\n")


def load_sidecar(lines: Iterable[str]) -> dict[str, dict[str, tuple[int, int, int, int]]]:
    encodings: dict[str, dict[str, tuple[int, int, int, int]]] = {}
    for number, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            record = json.loads(text)
            track_id = record["track_id"]
            modality = record["modality"]
            indices = _check_indices(record["indices"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise SemanticIdError(f"sidecar line {number}: {exc}") from None
        if modality not in SID_MODALITIES:
            raise SemanticIdError(f"sidecar line {number}: unknown modality {modality!r}")
        encodings.setdefault(modality, {})[track_id] = indices
    return encodings


class SemanticIndex:
    """Positional and exact-tuple inverted indexes over semantic ids."""

    def __init__(self):
        self._positional: dict[str, dict[tuple[int, int], set[str]]] = {}
        self._exact: dict[str, dict[tuple[int, ...], set[str]]] = {}
        self._by_track: dict[str, dict[str, tuple[int, ...]]] = {}

    def add_modality(
        self, modality: str, encodings: Mapping[str, Sequence[int]]
    ) -> None:
        if modality not in SID_MODALITIES:
            raise SemanticIdError(f"unknown modality {modality!r}")
        if modality in self._positional:
            raise SemanticIdError(f"modality {modality!r} already indexed")
        positional: dict[tuple[int, int], set[str]] = {}
        exact: dict[tuple[int, ...], set[str]] = {}
        by_track: dict[str, tuple[int, ...]] = {}
        for track_id in sorted(encodings):
            indices = _check_indices(encodings[track_id])
            by_track[track_id] = indices
            exact.setdefault(indices, set()).add(track_id)
            for position, code in enumerate(indices):
                positional.setdefault((position, code), set()).add(track_id)
        self._positional[modality] = positional
        self._exact[modality] = exact
        self._by_track[modality] = by_track

    @property
    def modalities(self) -> tuple[str, ...]:
        return tuple(sorted(self._positional))

    def indices_for(self, modality: str, track_id: str) -> tuple[int, ...] | None:
        return self._by_track.get(modality, {}).get(track_id)

    def tracks_for(self, modality: str) -> tuple[str, ...]:
        return tuple(sorted(self._by_track.get(modality, {})))

    def lookup(
        self,
        modality: str,
        indices: Sequence[int],
        topk: int,
        max_hamming: int = 1,
    ) -> list[str]:
        """Tracks within max_hamming substitutions of the query tuple.

        Ranked by Hamming distance ascending, then longest common
        prefix descending, then track_id ascending.
        """
        query = _check_indices(indices)
        if topk < 1:
            raise SemanticIdError("topk must be >= 1")
        if max_hamming < 0:
            raise SemanticIdError("max_hamming must be >= 0")
        by_track = self._by_track.get(modality)
        if by_track is None:
            raise SemanticIdError(f"modality {modality!r} not indexed")

        if max_hamming >= NUM_LAYERS:
            candidates: Iterable[str] = by_track
        else:
            # Distance <= h means the tuple agrees on >= 4-h positions,
            # so every candidate appears in at least one matching posting.
            positional = self._positional[modality]
            matches: dict[str, int] = {}
            for position, code in enumerate(query):
                for track_id in positional.get((position, code), ()):
                    matches[track_id] = matches.get(track_id, 0) + 1
            needed = NUM_LAYERS - max_hamming
            candidates = (t for t, count in matches.items() if count >= needed)

        scored: list[tuple[int, int, str]] = []
        for track_id in candidates:
            stored = by_track[track_id]
            distance = sum(1 for a, b in zip(query, stored) if a != b)
            if distance > max_hamming:
                continue
            prefix = 0
            for a, b in zip(query, stored):
                if a != b:
                    break
                prefix += 1
            scored.append((distance, -prefix, track_id))
        scored.sort()
        return [track_id for _, _, track_id in scored[:topk]]


def build_semantic_index(
    encodings: Mapping[str, Mapping[str, Sequence[int]]]
) -> SemanticIndex:
    """Index {modality -> {track_id -> indices}} for lookup."""
    index = SemanticIndex()
    for modality in sorted(encodings):
        index.add_modality(modality, encodings[modality])
    return index
