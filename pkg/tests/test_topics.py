import numpy as np
import pytest

from wordtopics.geometry import SimplexVector
from wordtopics.model import WordTopicVector
from wordtopics.topics import (DegenerateTopicError, TopicsError,
                               TopicWordMatrix, aggregate,
                               most_frequent_words, normalize_phi, top_words,
                               topics_to_json)


def wtv(word, theta, doc="d", pos=0):
    return WordTopicVector(theta=SimplexVector(np.array(theta, dtype=float)),
                           word=word, doc_id=doc, position=pos)


class TestAggregate:
    def test_single_occurrence(self):
        m = aggregate([(wtv("apple", [0.9, 0.1]), 0.5)], num_topics=2)
        assert np.allclose(m.row("apple"), [0.45, 0.05])

    def test_two_occurrences_sum(self):
        stream = [(wtv("a", [1.0, 0.0]), 1.0), (wtv("a", [0.0, 1.0]), 1.0)]
        m = aggregate(stream, num_topics=2)
        assert np.allclose(m.row("a"), [1.0, 1.0])
        assert m.counts["a"] == 2

    def test_row_sums_equal_alpha_sums(self):
        rng = np.random.default_rng(0)
        stream = []
        alpha_total = 0.0
        for _ in range(50):
            theta = rng.dirichlet(np.ones(4))
            alpha = float(rng.random())
            alpha_total += alpha
            stream.append((wtv("w", theta), alpha))
        m = aggregate(stream, num_topics=4)
        assert m.row("w").sum() == pytest.approx(alpha_total, abs=1e-9)

    def test_empty_stream(self):
        with pytest.raises(TopicsError):
            aggregate([], num_topics=2)

    def test_partition_linearity(self):
        rng = np.random.default_rng(1)
        stream = [(wtv(f"w{rng.integers(5)}", rng.dirichlet(np.ones(3))),
                   float(rng.random())) for _ in range(200)]
        whole = aggregate(stream, num_topics=3)
        part1 = aggregate(stream[:77], num_topics=3)
        part2 = aggregate(stream[77:], num_topics=3)
        part1.merge(part2)
        for w in whole.words:
            assert np.allclose(whole.row(w), part1.row(w), atol=1e-9)
            assert whole.counts[w] == part1.counts[w]

    def test_stream_order_independence(self):
        rng = np.random.default_rng(2)
        stream = [(wtv("x", rng.dirichlet(np.ones(3) * 0.1)), float(rng.random()))
                  for _ in range(500)]
        fwd = aggregate(stream, num_topics=3)
        rev = aggregate(list(reversed(stream)), num_topics=3)
        assert np.allclose(fwd.row("x"), rev.row("x"), atol=1e-9)

    def test_normalize_by_count(self):
        stream = [(wtv("a", [1.0, 0.0]), 1.0), (wtv("a", [0.0, 1.0]), 1.0)]
        m = aggregate(stream, num_topics=2, normalize_by_count=True)
        assert np.allclose(m.row("a"), [0.5, 0.5])


class TestTopWords:
    def _matrix(self, rows):
        m = TopicWordMatrix(2)
        for word, weights, count in rows:
            for _ in range(count):
                theta = np.array(weights) / np.sum(weights)
                m.add(word, theta, 1.0 / count)
        return m

    def test_stoplist_and_short_list(self):
        m = TopicWordMatrix(2)
        m.add("a", np.array([0.9, 0.1]), 1.0)
        m.add("b", np.array([0.5, 0.5]), 1.0)
        topic = top_words(m, z=0, k=2, stoplist={"b"})
        assert [w for w, _ in topic.top_words] == ["a"]
        assert topic.short_list

    def test_lexicographic_tie(self):
        m = TopicWordMatrix(2)
        m.add("y", np.array([0.5, 0.5]), 1.0)
        m.add("x", np.array([0.5, 0.5]), 1.0)
        topic = top_words(m, z=0, k=2)
        assert [w for w, _ in topic.top_words] == ["x", "y"]

    def test_k_of_many(self):
        m = TopicWordMatrix(2)
        rng = np.random.default_rng(0)
        for i in range(100):
            m.add(f"w{i:03d}", rng.dirichlet(np.ones(2)), 1.0)
        topic = top_words(m, z=0, k=10)
        weights = [w for _, w in topic.top_words]
        assert len(weights) == 10
        assert all(weights[i] >= weights[i + 1] for i in range(9))
        assert not topic.short_list

    def test_filter_monotonicity(self):
        m = TopicWordMatrix(2)
        rng = np.random.default_rng(3)
        for i in range(20):
            m.add(f"w{i:02d}", rng.dirichlet(np.ones(2)), 1.0)
        base = [w for w, _ in top_words(m, 0, k=20).top_words]
        bigger_stop = {"w03", "w07"}
        filtered = [w for w, _ in top_words(m, 0, k=20, stoplist=bigger_stop).top_words]
        survivors = [w for w in base if w not in bigger_stop]
        assert filtered == survivors

    def test_min_count(self):
        m = TopicWordMatrix(2)
        m.add("rare", np.array([0.9, 0.1]), 1.0)
        m.add("common", np.array([0.5, 0.5]), 1.0)
        m.add("common", np.array([0.5, 0.5]), 1.0)
        topic = top_words(m, 0, k=5, min_count=2)
        assert [w for w, _ in topic.top_words] == ["common"]

    def test_hard_assignment_oracle(self):
        # with one-hot thetas and alpha=1, ranking must equal count-table ranking
        rng = np.random.default_rng(4)
        m = TopicWordMatrix(3)
        counts = {}
        for i in range(30):
            word = f"w{rng.integers(8)}"
            z = int(rng.integers(3))
            theta = np.zeros(3)
            theta[z] = 1.0
            m.add(word, theta, 1.0)
            counts.setdefault(word, np.zeros(3))[z] += 1
        for z in range(3):
            expected = sorted(counts, key=lambda w: (-counts[w][z], w))
            got = [w for w, _ in top_words(m, z, k=len(counts)).top_words]
            assert got == expected


class TestNormalizePhi:
    def test_hand_normalization(self):
        m = TopicWordMatrix(2)
        m.add("a", np.array([0.5, 0.5]), 2.0)
        m.add("b", np.array([0.5, 0.5]), 6.0)
        words, phi = normalize_phi(m)
        assert words == ["a", "b"]
        # each topic column is (1, 3) over (a, b)
        assert np.allclose(phi[0], [0.25, 0.75])
        assert np.allclose(phi[1], [0.25, 0.75])

    def test_single_word(self):
        m = TopicWordMatrix(2)
        m.add("only", np.array([0.6, 0.4]), 1.0)
        _, phi = normalize_phi(m)
        assert np.allclose(phi, 1.0)

    def test_rows_on_simplex(self):
        rng = np.random.default_rng(5)
        m = TopicWordMatrix(4)
        for i in range(20):
            m.add(f"w{i}", rng.dirichlet(np.ones(4)), float(rng.random()))
        _, phi = normalize_phi(m)
        assert np.allclose(phi.sum(axis=1), 1.0, atol=1e-6)

    def test_degenerate_column(self):
        m = TopicWordMatrix(2)
        m.add("a", np.array([1.0, 0.0]), 1.0)
        with pytest.raises(DegenerateTopicError):
            normalize_phi(m)


class TestPresentation:
    def test_most_frequent(self):
        m = TopicWordMatrix(2)
        for _ in range(3):
            m.add("the", np.array([0.5, 0.5]), 1.0)
        m.add("rare", np.array([0.5, 0.5]), 1.0)
        assert most_frequent_words(m, 1) == {"the"}

    def test_json_shape(self):
        import json
        m = TopicWordMatrix(2)
        m.add("a", np.array([0.9, 0.1]), 1.0)
        m.add("b", np.array([0.1, 0.9]), 1.0)
        payload = json.loads(topics_to_json([top_words(m, z, k=2) for z in range(2)]))
        assert payload[0]["topic"] == 0
        assert {"word", "weight"} == set(payload[0]["words"][0])
