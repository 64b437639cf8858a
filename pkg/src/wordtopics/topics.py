"""Corpus-level topic extraction: aggregate per-occurrence word-topic vectors
into a word-by-topic weight table and rank topic words."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import WordTopicVector


class TopicsError(ValueError):
    pass


class DegenerateTopicError(TopicsError):
    pass


@dataclass
class Topic:
    index: int
    top_words: list[tuple[str, float]]
    short_list: bool = False  # fewer surviving words than requested


class TopicWordMatrix:
    """Word-by-topic weight table built from alpha-weighted theta sums.

    Kahan-compensated accumulation keeps the result independent of stream
    order; merge() lets parallel partial tables combine associatively.
    """

    def __init__(self, num_topics: int):
        self.num_topics = num_topics
        self._sums: dict[str, np.ndarray] = {}
        self._comp: dict[str, np.ndarray] = {}
        self.counts: dict[str, int] = {}

    @property
    def words(self) -> list[str]:
        return sorted(self._sums)

    def add(self, word: str, theta: np.ndarray, alpha: float) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.num_topics,):
            raise TopicsError(f"theta has shape {theta.shape}, expected ({self.num_topics},)")
        if word not in self._sums:
            self._sums[word] = np.zeros(self.num_topics)
            self._comp[word] = np.zeros(self.num_topics)
            self.counts[word] = 0
        term = alpha * theta
        # Kahan step
        y = term - self._comp[word]
        t = self._sums[word] + y
        self._comp[word] = (t - self._sums[word]) - y
        self._sums[word] = t
        self.counts[word] += 1

    def row(self, word: str) -> np.ndarray:
        return self._sums[word].copy()

    def merge(self, other: "TopicWordMatrix") -> None:
        if other.num_topics != self.num_topics:
            raise TopicsError("topic count mismatch in merge")
        for word, row in other._sums.items():
            if word not in self._sums:
                self._sums[word] = row.copy()
                self._comp[word] = other._comp[word].copy()
                self.counts[word] = other.counts[word]
            else:
                for z in range(self.num_topics):
                    y = row[z] - self._comp[word][z]
                    t = self._sums[word][z] + y
                    self._comp[word][z] = (t - self._sums[word][z]) - y
                    self._sums[word][z] = t
                self.counts[word] += other.counts[word]


def aggregate(stream: Iterable[tuple[WordTopicVector, float]],
              num_topics: int, normalize_by_count: bool = False) -> TopicWordMatrix:
    """Single streaming pass over (word-topic vector, alpha) pairs.

    Default is the raw alpha-weighted sum; normalize_by_count divides each
    row by its occurrence count (sums favor frequent words).
    """
    matrix = TopicWordMatrix(num_topics)
    empty = True
    for wtv, alpha in stream:
        matrix.add(wtv.word, wtv.theta.values, float(alpha))
        empty = False
    if empty:
        raise TopicsError("cannot aggregate an empty stream")
    if normalize_by_count:
        for word in list(matrix._sums):
            matrix._sums[word] = matrix._sums[word] / matrix.counts[word]
            matrix._comp[word] = np.zeros(num_topics)
    return matrix


def most_frequent_words(matrix: TopicWordMatrix, n: int) -> set[str]:
    """The n words with the highest occurrence counts (ties lexicographic);
    removed by default when presenting topics."""
    ranked = sorted(matrix.counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return {w for w, _ in ranked[:n]}


def top_words(matrix: TopicWordMatrix, z: int, k: int = 10,
              stoplist: set[str] | None = None, min_count: int = 1) -> Topic:
    """Rank filtered words by their weight for topic z, descending;
    ties broken lexicographically."""
    if k < 1:
        raise TopicsError("k must be >= 1")
    if not 0 <= z < matrix.num_topics:
        raise TopicsError(f"topic index {z} out of range")
    stop = stoplist or set()
    survivors = [(w, float(matrix._sums[w][z])) for w in matrix._sums
                 if w not in stop and matrix.counts[w] >= min_count]
    survivors.sort(key=lambda kv: (-kv[1], kv[0]))
    chosen = survivors[:k]
    return Topic(index=z, top_words=chosen, short_list=len(survivors) < k)


def normalize_phi(matrix: TopicWordMatrix) -> tuple[list[str], np.ndarray]:
    """Topic-word distributions: (words, phi) with phi (Z, V) rows on the simplex."""
    words = matrix.words
    table = np.stack([matrix._sums[w] for w in words])  # (V, Z)
    phi = table.T.copy()
    for z in range(matrix.num_topics):
        s = phi[z].sum()
        if s <= 0:
            raise DegenerateTopicError(f"topic {z} has no weight on any word")
        phi[z] /= s
    return words, phi


def load_stoplist(path: str | Path) -> set[str]:
    with open(path, encoding="utf-8") as fh:
        return {line.strip() for line in fh if line.strip()}


def topics_to_json(topics: list[Topic]) -> str:
    payload = [{"topic": t.index,
                "words": [{"word": w, "weight": weight} for w, weight in t.top_words]}
               for t in topics]
    return json.dumps(payload, ensure_ascii=False, indent=2)
