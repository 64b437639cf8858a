"""Measurement suite: sliding-window C_V coherence, embedding-centroid topic
diversity, a from-scratch logistic-regression classification probe, the
OOV train/test split protocol, and a planted-topic synthetic corpus
generator used as a testing oracle."""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .corpus import DocumentRecord, split_words
from .geometry import dirichlet_rows

NPMI_EPS = 1e-12


class EvalError(ValueError):
    pass


class ReferenceIndex:
    """Boolean sliding-window co-occurrence counts over a reference corpus.

    Stride-1 windows of `window_size` tokens; documents shorter than the
    window contribute a single (short) window.
    """

    def __init__(self, window_size: int = 110):
        if window_size < 1:
            raise EvalError("window_size must be >= 1")
        self.window_size = window_size
        self.total_windows = 0
        self.word_counts: Counter[str] = Counter()
        self.pair_counts: Counter[tuple[str, str]] = Counter()

    def add_document(self, words: list[str]) -> None:
        n = len(words)
        if n == 0:
            return
        w = self.window_size
        n_windows = max(1, n - w + 1)
        for i in range(n_windows):
            present = sorted(set(words[i:i + w]))
            self.total_windows += 1
            for a_idx, a in enumerate(present):
                self.word_counts[a] += 1
                for b in present[a_idx + 1:]:
                    self.pair_counts[(a, b)] += 1

    def merge(self, other: "ReferenceIndex") -> None:
        if other.window_size != self.window_size:
            raise EvalError("window size mismatch in merge")
        self.total_windows += other.total_windows
        self.word_counts.update(other.word_counts)
        self.pair_counts.update(other.pair_counts)

    def p(self, word: str) -> float:
        return self.word_counts[word] / self.total_windows

    def p_pair(self, a: str, b: str) -> float:
        if a == b:
            return self.p(a)
        key = (a, b) if a <= b else (b, a)
        return self.pair_counts[key] / self.total_windows


def build_reference_index(corpus: list[DocumentRecord],
                          window_size: int = 110) -> ReferenceIndex:
    if not corpus:
        raise EvalError("reference corpus is empty")
    index = ReferenceIndex(window_size)
    for doc in corpus:
        index.add_document(split_words(doc.text))
    return index


def npmi(index: ReferenceIndex, a: str, b: str, eps: float = NPMI_EPS) -> float:
    """Normalized PMI with epsilon smoothing; 0 if either word is unseen."""
    pa, pb = index.p(a), index.p(b)
    if pa == 0.0 or pb == 0.0:
        return 0.0
    pab = index.p_pair(a, b)
    return np.log((pab + eps) / (pa * pb)) / -np.log(pab + eps)


@dataclass
class CoherenceResult:
    value: float
    missing_words: list[str]

    def __float__(self) -> float:
        return self.value


def coherence_cv(topic_words: list[str], index: ReferenceIndex) -> CoherenceResult:
    """C_V: one-set segmentation, NPMI context vectors, indirect cosine
    similarity against the summed vector, arithmetic mean."""
    if len(topic_words) < 2:
        raise EvalError("coherence needs at least 2 topic words")
    missing = [w for w in topic_words if index.word_counts[w] == 0]
    n = len(topic_words)
    vectors = np.zeros((n, n))
    for i, wi in enumerate(topic_words):
        for j, wj in enumerate(topic_words):
            vectors[i, j] = npmi(index, wi, wj)
    summed = vectors.sum(axis=0)
    sims = []
    for i in range(n):
        nu = np.linalg.norm(vectors[i])
        nv = np.linalg.norm(summed)
        sims.append(0.0 if nu == 0.0 or nv == 0.0
                    else float(vectors[i] @ summed / (nu * nv)))
    return CoherenceResult(value=float(np.mean(sims)), missing_words=missing)


def diversity(topics: list[list[str]],
              lookup: Callable[[str, int], np.ndarray]) -> float:
    """1 minus the mean pairwise cosine similarity of topic centroids,
    where a centroid is the mean embedding of the topic's top words."""
    if len(topics) < 2:
        raise EvalError("diversity needs at least 2 topics")
    centroids = []
    for z, words in enumerate(topics):
        rows = []
        for w in words:
            vec = lookup(w, z)
            if vec is None:
                raise EvalError(f"no embedding for word {w!r} in topic {z}")
            rows.append(np.asarray(vec, dtype=np.float64))
        centroids.append(np.mean(rows, axis=0))
    sims = []
    for i in range(len(centroids)):
        for j in range(i + 1, len(centroids)):
            a, b = centroids[i], centroids[j]
            na, nb = np.linalg.norm(a), np.linalg.norm(b)
            sims.append(0.0 if na == 0.0 or nb == 0.0 else float(a @ b / (na * nb)))
    return 1.0 - float(np.mean(sims))


def build_topic_embedding_lookup(
        occurrences: Iterable[tuple[str, float, np.ndarray, np.ndarray]],
        num_topics: int) -> Callable[[str, int], np.ndarray | None]:
    """Per-topic word embeddings: for each (word, topic) the alpha*theta[z]
    weighted mean of the word's contextualized embeddings over occurrences."""
    sums: dict[str, np.ndarray] = {}
    weights: dict[str, np.ndarray] = {}
    for word, alpha, theta, e_w in occurrences:
        theta = np.asarray(theta, dtype=np.float64)
        e_w = np.asarray(e_w, dtype=np.float64)
        w = alpha * theta  # (Z,)
        if word not in sums:
            sums[word] = np.zeros((num_topics, e_w.shape[0]))
            weights[word] = np.zeros(num_topics)
        sums[word] += np.outer(w, e_w)
        weights[word] += w

    def lookup(word: str, z: int):
        if word not in sums or weights[word][z] <= 0:
            return None
        return sums[word][z] / weights[word][z]

    return lookup


# --- classification probe -------------------------------------------------

PROBE_L2 = 1e-4
PROBE_ITERS = 500
PROBE_LR = 0.5


def _softmax(x: np.ndarray) -> np.ndarray:
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=1, keepdims=True)


def _fit_logreg(x: np.ndarray, y: np.ndarray, n_classes: int) -> np.ndarray:
    """Full-batch gradient descent, L2 penalty; the pinned 'default setting'."""
    n, d = x.shape
    xb = np.hstack([x, np.ones((n, 1))])
    w = np.zeros((n_classes, d + 1))
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    for _ in range(PROBE_ITERS):
        p = _softmax(xb @ w.T)
        grad = (p - onehot).T @ xb / n + PROBE_L2 * w
        w -= PROBE_LR * grad
    return w


def _predict_logreg(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    xb = np.hstack([x, np.ones((x.shape[0], 1))])
    return np.argmax(xb @ w.T, axis=1)


def classify_probe(vectors: np.ndarray, labels: list[str],
                   folds: int = 5, seed: int = 0) -> float:
    """Stratified k-fold CV accuracy of multinomial logistic regression."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != len(labels):
        raise EvalError("vectors/labels mismatch")
    classes = sorted(set(labels))
    if len(classes) == 1:
        warnings.warn("classification probe with a single class is degenerate")
        return 1.0
    class_to_id = {c: i for i, c in enumerate(classes)}
    y = np.array([class_to_id[l] for l in labels])
    rng = np.random.Generator(np.random.PCG64(seed))
    fold_of = np.empty(len(labels), dtype=int)
    for c in range(len(classes)):
        members = np.flatnonzero(y == c)
        if len(members) < folds:
            raise EvalError(f"class {classes[c]!r} has {len(members)} docs, need >= {folds}")
        members = members[rng.permutation(len(members))]
        fold_of[members] = np.arange(len(members)) % folds
    accs = []
    for f in range(folds):
        test = fold_of == f
        w = _fit_logreg(x[~test], y[~test], len(classes))
        pred = _predict_logreg(w, x[test])
        accs.append(float(np.mean(pred == y[test])))
    return float(np.mean(accs))


# --- OOV split protocol ---------------------------------------------------

@dataclass
class OOVSplit:
    train: list[str]
    test1: list[str]
    test2: list[str]
    ratios: dict[str, float]
    summary: dict

    def __post_init__(self):
        sets = [set(self.train), set(self.test1), set(self.test2)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise EvalError("OOV split sets must be disjoint")


def oov_split(corpus: list[DocumentRecord], train_size: int,
              hi: float = 0.9, lo: float = 0.7, seed: int = 0) -> OOVSplit:
    """Seeded train sample; remaining docs go to Test1 (observed-vocab ratio
    >= hi) or Test2 (ratio <= lo); docs in between are discarded."""
    if len(corpus) <= train_size:
        raise EvalError(f"corpus has {len(corpus)} docs, need more than {train_size}")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(corpus))
    train_docs = [corpus[i] for i in order[:train_size]]
    rest = [corpus[i] for i in order[train_size:]]
    train_vocab = set()
    for doc in train_docs:
        train_vocab.update(split_words(doc.text))
    test1, test2, ratios = [], [], {}
    stats = {"test1": [], "test2": []}
    for doc in rest:
        distinct = set(split_words(doc.text))
        if not distinct:
            continue
        ratio = len(distinct & train_vocab) / len(distinct)
        ratios[doc.id] = ratio
        new = len(distinct) - len(distinct & train_vocab)
        if ratio >= hi:
            test1.append(doc.id)
            stats["test1"].append((len(distinct), new))
        elif ratio <= lo:
            test2.append(doc.id)
            stats["test2"].append((len(distinct), new))
    if not test1 or not test2:
        hist, edges = np.histogram(list(ratios.values()), bins=10, range=(0.0, 1.0))
        raise EvalError(
            "empty OOV test set; ratio histogram "
            + ", ".join(f"[{edges[i]:.1f},{edges[i+1]:.1f}):{hist[i]}" for i in range(10)))
    summary = {}
    for name in ("test1", "test2"):
        vocabs = [v for v, _ in stats[name]]
        news = [n for _, n in stats[name]]
        summary[f"ave_vocab_{name}"] = float(np.mean(vocabs))
        summary[f"ave_new_vocab_{name}"] = float(np.mean(news))
        summary[f"n_{name}"] = len(vocabs)
    return OOVSplit(train=[d.id for d in train_docs], test1=test1, test2=test2,
                    ratios=ratios, summary=summary)


# --- planted-topic synthetic corpus ----------------------------------------

@dataclass
class PlantedCorpus:
    documents: list[DocumentRecord]
    topic_word: np.ndarray  # (K, V)
    vocab: list[str]
    labels: list[int]


def make_planted_corpus(num_topics: int, vocab: list[str], docs_per_class: int,
                        doc_len: int, concentration: float = 0.1,
                        seed: int = 0, within_mass: float = 0.98) -> PlantedCorpus:
    """LDA-style generator with K disjoint high-probability word groups.

    Each document draws a topic mixture from Dirichlet(concentration); its
    dominant topic is the class label, and generation is rejection-balanced
    so every class gets docs_per_class documents.
    """
    if len(vocab) < 2 * num_topics:
        raise EvalError(f"vocab of {len(vocab)} too small for {num_topics} topics")
    if len(set(vocab)) != len(vocab):
        raise EvalError("vocab has duplicate words")
    v = len(vocab)
    rng = np.random.Generator(np.random.PCG64(seed))
    group = np.array_split(np.arange(v), num_topics)
    topic_word = np.full((num_topics, v), 0.0)
    for k in range(num_topics):
        topic_word[k, :] = (1.0 - within_mass) / (v - len(group[k]))
        topic_word[k, group[k]] = within_mass / len(group[k])
    docs, labels = [], []
    counter = 0
    for k in range(num_topics):
        made = 0
        while made < docs_per_class:
            mixture = dirichlet_rows(rng, concentration, num_topics, 1)[0]
            if int(np.argmax(mixture)) != k:
                continue
            token_topics = rng.choice(num_topics, size=doc_len, p=mixture)
            words = [vocab[rng.choice(v, p=topic_word[t])] for t in token_topics]
            docs.append(DocumentRecord(id=f"doc{counter:05d}", text=" ".join(words),
                                       label=str(k)))
            labels.append(k)
            counter += 1
            made += 1
    return PlantedCorpus(documents=docs, topic_word=topic_word,
                         vocab=list(vocab), labels=labels)


def inject_novel_words(docs: list[DocumentRecord], rate: float,
                       seed: int = 0, prefix: str = "novelword") -> list[DocumentRecord]:
    """Replace a fraction of each document's tokens with fresh unseen words;
    supports the OOV protocol at desk scale."""
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    counter = 0
    for doc in docs:
        words = split_words(doc.text)
        replaced = []
        for w in words:
            if rng.random() < rate:
                replaced.append(f"{prefix}{counter}")
                counter += 1
            else:
                replaced.append(w)
        out.append(DocumentRecord(id=doc.id, text=" ".join(replaced), label=doc.label))
    return out
