"""Okapi BM25 over the per-field text corpora of the catalog.

One index per corpus (title, artist, album, lyrics, attributes). Scores
use the standard Okapi form with idf = ln(1 + (N - df + 0.5)/(df + 0.5)),
which is non-negative for every document frequency.
"""

from __future__ import annotations

import math
import re
from collections import Counter

from .catalog import CORPUS_TYPES, Catalog
from .errors import MelodexError


class Bm25Error(MelodexError):
    pass


_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumerics; underscores separate."""
    return _TOKEN_RE.findall(text.lower())


class Bm25Index:
    """Inverted index over one text field for a fixed document set."""

    def __init__(self, documents: dict[str, str], k1: float = 1.2, b: float = 0.75):
        if k1 < 0 or not 0 <= b <= 1:
            raise Bm25Error(f"invalid parameters k1={k1} b={b}")
        self.k1 = k1
        self.b = b
        self.doc_ids = sorted(documents)
        self.doc_lengths: dict[str, int] = {}
        # term -> {doc_id -> term frequency}
        self.postings: dict[str, dict[str, int]] = {}
        for doc_id in self.doc_ids:
            tokens = tokenize(documents[doc_id])
            self.doc_lengths[doc_id] = len(tokens)
            for term, count in Counter(tokens).items():
                self.postings.setdefault(term, {})[doc_id] = count
        total = sum(self.doc_lengths.values())
        self.avg_length = total / len(self.doc_ids) if self.doc_ids else 0.0
        self.idf: dict[str, float] = {}
        n = len(self.doc_ids)
        for term, posting in self.postings.items():
            df = len(posting)
            self.idf[term] = math.log(1 + (n - df + 0.5) / (df + 0.5))

    def score(self, query: str, doc_id: str) -> float:
        """BM25 score of one document; repeated query terms add up."""
        if doc_id not in self.doc_lengths:
            raise Bm25Error(f"unknown document {doc_id!r}")
        length = self.doc_lengths[doc_id]
        total = 0.0
        for term in tokenize(query):
            posting = self.postings.get(term)
            if posting is None or doc_id not in posting:
                continue
            tf = posting[doc_id]
            denom = tf + self.k1 * (1 - self.b + self.b * length / self.avg_length)
            total += self.idf[term] * tf * (self.k1 + 1) / denom
        return total

    def search(self, query: str, topk: int) -> list[tuple[str, float]]:
        """Top documents by score, descending; zero scores are dropped.

        Ties break by doc id ascending. An empty or fully out-of-
        vocabulary query returns [].
        """
        if topk < 1:
            raise Bm25Error("topk must be >= 1")
        scores: dict[str, float] = {}
        for term in tokenize(query):
            posting = self.postings.get(term)
            if posting is None:
                continue
            idf = self.idf[term]
            for doc_id, tf in posting.items():
                length = self.doc_lengths[doc_id]
                denom = tf + self.k1 * (1 - self.b + self.b * length / self.avg_length)
                scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (self.k1 + 1) / denom
        ranked = sorted(
            ((doc_id, s) for doc_id, s in scores.items() if s > 0.0),
            key=lambda pair: (-pair[1], pair[0]),
        )
        return ranked[:topk]


def build_corpus_indexes(
    catalog: Catalog, k1: float = 1.2, b: float = 0.75
) -> dict[str, Bm25Index]:
    """One Bm25Index per corpus type, all over the same track ids."""
    track_ids = catalog.track_ids()
    return {
        corpus: Bm25Index(
            {tid: catalog.corpus_text(tid, corpus) for tid in track_ids},
            k1=k1,
            b=b,
        )
        for corpus in CORPUS_TYPES
    }
