"""Pairwise implicit-feedback factorization of listening history.

Trains user and item vectors so that, for each user, observed tracks
score above unobserved ones: maximize ln sigmoid(x_ui - x_uj) minus an
L2 penalty, by SGD over sampled (user, positive, negative) triples.
The per-triple loss and gradient functions are exposed separately so
the update rule can be checked against finite differences.
"""

from __future__ import annotations

import datetime as dt
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import MelodexError


class BprError(MelodexError):
    pass


@dataclass(frozen=True)
class Interaction:
    user_id: str
    track_id: str
    timestamp: int

    def __post_init__(self):
        if self.timestamp < 0:
            raise BprError(
                f"interaction ({self.user_id!r}, {self.track_id!r}) "
                f"has negative timestamp {self.timestamp}"
            )


def load_interactions(lines: Iterable[str]) -> list[Interaction]:
    """Parse JSONL records {"user_id", "track_id", "timestamp"}."""
    interactions = []
    for number, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            raise BprError(f"line {number}: blank line in interactions file")
        try:
            record = json.loads(text)
        except json.JSONDecodeError as exc:
            raise BprError(f"line {number}: invalid JSON ({exc.msg})") from None
        try:
            user_id = record["user_id"]
            track_id = record["track_id"]
            timestamp = record["timestamp"]
        except (TypeError, KeyError):
            raise BprError(
                f"line {number}: expected user_id, track_id and timestamp"
            ) from None
        if (
            not isinstance(user_id, str)
            or not isinstance(track_id, str)
            or not isinstance(timestamp, int)
            or isinstance(timestamp, bool)
        ):
            raise BprError(f"line {number}: malformed interaction record")
        interactions.append(Interaction(user_id, track_id, timestamp))
    return interactions


def chronological_split(
    interactions: Sequence[Interaction], boundary_fraction: float = 0.8
) -> tuple[list[Interaction], list[Interaction]]:
    """Split by time so the train side strictly precedes the test side.

    The cutoff is the boundary_fraction quantile of timestamps; events
    at the cutoff itself go to train. If every event shares one
    timestamp the test side is empty and a warning is emitted.
    """
    if not interactions:
        raise BprError("cannot split an empty interaction list")
    if not 0.0 < boundary_fraction < 1.0:
        raise BprError(f"boundary_fraction must be in (0,1), got {boundary_fraction}")
    timestamps = sorted(event.timestamp for event in interactions)
    k = math.floor(boundary_fraction * len(timestamps))
    if k == 0:
        return [], list(interactions)
    cutoff = timestamps[k - 1]
    train = [event for event in interactions if event.timestamp <= cutoff]
    test = [event for event in interactions if event.timestamp > cutoff]
    if not test:
        warnings.warn(
            "chronological_split produced an empty test side "
            "(all timestamps at or below the cutoff)",
            stacklevel=2,
        )
    return train, test


@dataclass(frozen=True)
class BprConfig:
    dimension: int = 64
    learning_rate: float = 0.05
    regularization: float = 0.002
    epochs: int = 30
    negatives_per_positive: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if self.dimension < 1:
            raise BprError("dimension must be >= 1")
        if self.learning_rate < 0:
            raise BprError("learning_rate must be >= 0")
        if self.regularization < 0:
            raise BprError("regularization must be >= 0")
        if self.epochs < 1:
            raise BprError("epochs must be >= 1")
        if self.negatives_per_positive < 1:
            raise BprError("negatives_per_positive must be >= 1")


def _sigmoid(x: float) -> float:
    # Piecewise form avoids overflow for large |x|.
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def triple_loss(
    w_u: np.ndarray, h_i: np.ndarray, h_j: np.ndarray, regularization: float
) -> float:
    """Negated per-triple objective (to minimize)."""
    x = float(w_u @ (h_i - h_j))
    penalty = regularization * (w_u @ w_u + h_i @ h_i + h_j @ h_j)
    return float(np.logaddexp(0.0, -x)) + float(penalty)


def triple_grads(
    w_u: np.ndarray, h_i: np.ndarray, h_j: np.ndarray, regularization: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of triple_loss wrt the three parameter vectors."""
    x = float(w_u @ (h_i - h_j))
    s = _sigmoid(-x)
    two_reg = 2.0 * regularization
    g_u = -s * (h_i - h_j) + two_reg * w_u
    g_i = -s * w_u + two_reg * h_i
    g_j = s * w_u + two_reg * h_j
    return g_u, g_i, g_j


@dataclass
class BprResult:
    user_vectors: dict[str, np.ndarray]
    item_vectors: dict[str, np.ndarray]
    epoch_losses: list[float] = field(default_factory=list)


def train_bpr(
    train: Sequence[Interaction],
    item_ids: Iterable[str],
    config: BprConfig = BprConfig(),
) -> BprResult:
    """Train user and item vectors over the full item universe.

    item_ids is the catalog: items never interacted with keep their
    initialization, so every track is still scorable at serving time.
    Deterministic for a fixed config and seed.
    """
    items = sorted(set(item_ids))
    if len(items) < 2:
        raise BprError("training needs at least 2 items")
    if not train:
        raise BprError("training needs at least 1 interaction")
    item_index = {item: pos for pos, item in enumerate(items)}
    users = sorted({event.user_id for event in train})
    user_index = {user: pos for pos, user in enumerate(users)}

    positives_by_user: dict[int, set[int]] = {pos: set() for pos in range(len(users))}
    triples: list[tuple[int, int]] = []
    for event in train:
        item_pos = item_index.get(event.track_id)
        if item_pos is None:
            raise BprError(f"interaction references unknown item {event.track_id!r}")
        user_pos = user_index[event.user_id]
        positives_by_user[user_pos].add(item_pos)
        triples.append((user_pos, item_pos))

    rng = np.random.default_rng(config.rng_seed)
    user_matrix = rng.normal(0.0, 0.1, size=(len(users), config.dimension))
    item_matrix = rng.normal(0.0, 0.1, size=(len(items), config.dimension))

    n_items = len(items)
    lr = config.learning_rate
    reg = config.regularization
    epoch_losses: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(len(triples))
        total_loss = 0.0
        updates = 0
        for position in order:
            user_pos, item_pos = triples[position]
            seen = positives_by_user[user_pos]
            if len(seen) >= n_items:
                continue  # no negative exists for this user
            for _ in range(config.negatives_per_positive):
                negative = int(rng.integers(0, n_items))
                while negative in seen:
                    negative = int(rng.integers(0, n_items))
                w_u = user_matrix[user_pos]
                h_i = item_matrix[item_pos]
                h_j = item_matrix[negative]
                total_loss += triple_loss(w_u, h_i, h_j, reg)
                updates += 1
                g_u, g_i, g_j = triple_grads(w_u, h_i, h_j, reg)
                user_matrix[user_pos] = w_u - lr * g_u
                item_matrix[item_pos] = h_i - lr * g_i
                item_matrix[negative] = h_j - lr * g_j
        epoch_losses.append(total_loss / updates if updates else 0.0)

    user_vectors = {user: user_matrix[pos].copy() for user, pos in user_index.items()}
    item_vectors = {item: item_matrix[pos].copy() for item, pos in item_index.items()}
    return BprResult(user_vectors, item_vectors, epoch_losses)


def pairwise_auc(
    result: BprResult,
    train: Sequence[Interaction],
    test: Sequence[Interaction],
) -> float:
    """Held-out pairwise AUC, macro-averaged over users with test events.

    For each user, the fraction of (held-out positive, never-seen item)
    pairs where the positive scores strictly higher; ties count half.
    Users whose test items were all seen in train, or with no unseen
    negatives, are skipped.
    """
    items = sorted(result.item_vectors)
    item_index = {item: pos for pos, item in enumerate(items)}
    item_matrix = np.stack([result.item_vectors[item] for item in items])

    train_by_user: dict[str, set[int]] = {}
    for event in train:
        train_by_user.setdefault(event.user_id, set()).add(item_index[event.track_id])
    test_by_user: dict[str, set[int]] = {}
    for event in test:
        position = item_index.get(event.track_id)
        if position is not None:
            test_by_user.setdefault(event.user_id, set()).add(position)

    per_user: list[float] = []
    for user, test_items in sorted(test_by_user.items()):
        user_vector = result.user_vectors.get(user)
        if user_vector is None:
            continue
        seen = train_by_user.get(user, set())
        positives = sorted(test_items - seen)
        if not positives:
            continue
        scores = item_matrix @ user_vector
        candidate_mask = np.ones(len(items), dtype=bool)
        for position in seen | test_items:
            candidate_mask[position] = False
        negative_scores = scores[candidate_mask]
        if negative_scores.size == 0:
            continue
        wins = 0.0
        for position in positives:
            wins += float(np.count_nonzero(negative_scores < scores[position]))
            wins += 0.5 * float(np.count_nonzero(negative_scores == scores[position]))
        per_user.append(wins / (len(positives) * negative_scores.size))
    if not per_user:
        raise BprError("no scoreable (user, held-out item) pairs")
    return sum(per_user) / len(per_user)


def export_cf_tables(result: BprResult, user_path: str, item_path: str) -> None:
    """Write both tables in the embedding JSONL format; round-trips."""
    if not result.user_vectors or not result.item_vectors:
        raise BprError("cannot export an empty table")
    for path, table in ((user_path, result.user_vectors), (item_path, result.item_vectors)):
        with open(path, "w", encoding="utf-8") as handle:
            for entry_id in sorted(table):
                record = {"id": entry_id, "vector": [float(x) for x in table[entry_id]]}
                handle.write(json.dumps(record) + "\n")


def interactions_from_dates(
    records: Iterable[tuple[str, str, dt.date]]
) -> list[Interaction]:
    """Convenience for fixtures that think in dates, not epoch seconds."""
    epoch = dt.date(1970, 1, 1)
    return [
        Interaction(user_id, track_id, (day - epoch).days * 86400)
        for user_id, track_id, day in records
    ]
