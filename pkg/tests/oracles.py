"""Brute-force reference implementations used only by tests.

Deliberately naive: explicit window enumeration, direct probability ratios,
direct cosine. Kept independent of the library code paths they check.
"""

import math

import numpy as np

from wordtopics.corpus import split_words


def enumerate_windows(docs_words, window_size):
    windows = []
    for words in docs_words:
        n = len(words)
        if n == 0:
            continue
        if n < window_size:
            windows.append(set(words))
        else:
            for i in range(n - window_size + 1):
                windows.append(set(words[i:i + window_size]))
    return windows


def brute_force_cv(topic_words, docs_texts, window_size, eps=1e-12):
    windows = enumerate_windows([split_words(t) for t in docs_texts], window_size)
    total = len(windows)

    def p(word):
        return sum(1 for w in windows if word in w) / total

    def p_joint(a, b):
        if a == b:
            return p(a)
        return sum(1 for w in windows if a in w and b in w) / total

    def npmi(a, b):
        pa, pb = p(a), p(b)
        if pa == 0 or pb == 0:
            return 0.0
        pab = p_joint(a, b)
        return math.log((pab + eps) / (pa * pb)) / -math.log(pab + eps)

    n = len(topic_words)
    vectors = [[npmi(wi, wj) for wj in topic_words] for wi in topic_words]
    summed = [sum(vectors[i][j] for i in range(n)) for j in range(n)]

    def cosine(u, v):
        nu = math.sqrt(sum(x * x for x in u))
        nv = math.sqrt(sum(x * x for x in v))
        if nu == 0 or nv == 0:
            return 0.0
        return sum(a * b for a, b in zip(u, v)) / (nu * nv)

    return sum(cosine(vectors[i], summed) for i in range(n)) / n


def brute_force_logreg_null(n=500, seed=0):
    """Permutation-null accuracy for a balanced 2-class problem: labels are
    independent of features, so CV accuracy concentrates near 0.5."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 5))
    labels = ["a", "b"] * (n // 2)
    rng.shuffle(labels)
    return x, labels
