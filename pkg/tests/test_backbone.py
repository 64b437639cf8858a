import math

import numpy as np
import pytest
import torch

from wordtopics.backbone import (BackboneConfig, BackboneError, CachedBackbone,
                                 CacheFormatError, CacheMissError,
                                 EmbeddingCache, ToyBackbone,
                                 UnsupportedModeError, build_vocab, tokenize)
from wordtopics.corpus import DocumentRecord


def docs_from(texts):
    return [DocumentRecord(id=f"d{i}", text=t) for i, t in enumerate(texts)]


SMALL_CONFIG = BackboneConfig(dim=32, layers=1, heads=2, vocab_size=100,
                              prompt_len=4, mask_rate=0.15, max_len=64)


class TestVocab:
    def test_contains_words_and_specials(self):
        vocab = build_vocab(docs_from(["a b b"]), max_size=10)
        assert "a" in vocab and "b" in vocab
        assert len(vocab) == 6  # 2 words + 4 specials

    def test_frequency_then_lexicographic(self):
        vocab = build_vocab(docs_from(["x y", "y z"]), max_size=5)
        words = vocab.id_to_word[4:]
        assert words[0] == "y"
        assert words[1:] == ["x", "z"]

    def test_empty_corpus(self):
        with pytest.raises(BackboneError):
            build_vocab([], max_size=5)

    def test_max_size_cap(self):
        vocab = build_vocab(docs_from(["a b c d e f"]), max_size=3)
        assert len(vocab) == 7


class TestTokenize:
    def test_lowercases(self):
        vocab = build_vocab(docs_from(["apple banana"]), 10)
        td = tokenize(DocumentRecord(id="x", text="Apple banana"), vocab)
        assert td.words == ["apple", "banana"]
        assert all(i != vocab.unk_id for i in td.token_ids)

    def test_oov_keeps_surface(self):
        vocab = build_vocab(docs_from(["apple"]), 10)
        td = tokenize(DocumentRecord(id="x", text="zzzzunknown apple"), vocab)
        assert td.words == ["zzzzunknown", "apple"]
        assert td.token_ids[0] == vocab.unk_id
        assert td.token_ids[1] == vocab.lookup("apple")

    def test_no_words(self):
        vocab = build_vocab(docs_from(["apple"]), 10)
        td = tokenize(DocumentRecord(id="x", text="!!! ???"), vocab)
        assert td.words == [] and td.token_ids == []

    def test_spans_cover_tokens(self):
        vocab = build_vocab(docs_from(["a b c d"]), 10)
        td = tokenize(DocumentRecord(id="x", text="a b c d"), vocab)
        covered = [i for s, e in td.word_spans for i in range(s, e)]
        assert covered == list(range(len(td.token_ids)))


class TestToyEmbed:
    def test_identical_docs_identical_rows(self):
        corpus = docs_from(["apple", "apple"])
        vocab = build_vocab(corpus, 10)
        bb = ToyBackbone(SMALL_CONFIG, vocab, seed=0)
        bb.eval()
        with torch.no_grad():
            out = bb.embed([tokenize(d, vocab) for d in corpus])
        assert torch.equal(out[0].word_embeddings, out[1].word_embeddings)

    def test_contextualization(self):
        corpus = docs_from(["bank river water", "bank money loan"])
        vocab = build_vocab(corpus, 20)
        bb = ToyBackbone(SMALL_CONFIG, vocab, seed=0)
        with torch.no_grad():
            out = bb.embed([tokenize(d, vocab) for d in corpus])
        d = (out[0].word_embeddings[0] - out[1].word_embeddings[0]).norm()
        assert float(d) > 0

    def test_row_count_matches_words(self):
        corpus = docs_from(["a b c", "a"])
        vocab = build_vocab(corpus, 20)
        bb = ToyBackbone(SMALL_CONFIG, vocab, seed=0)
        with torch.no_grad():
            out = bb.embed([tokenize(d, vocab) for d in corpus])
        assert out[0].word_embeddings.shape == (3, SMALL_CONFIG.dim)
        assert out[1].word_embeddings.shape == (1, SMALL_CONFIG.dim)

    def test_padding_invariance(self):
        # a doc's rows should not depend on batch-mates' lengths
        corpus = docs_from(["a b", "c d e f g h"])
        vocab = build_vocab(corpus, 20)
        bb = ToyBackbone(SMALL_CONFIG, vocab, seed=0)
        tds = [tokenize(d, vocab) for d in corpus]
        with torch.no_grad():
            together = bb.embed(tds)[0].word_embeddings
            alone = bb.embed(tds[:1])[0].word_embeddings
        assert torch.allclose(together, alone, atol=1e-5)


class TestMLM:
    def _setup(self, mask_rate=0.15, vocab_words=200):
        texts = [" ".join(f"w{(i * 7 + j) % vocab_words}" for j in range(20))
                 for i in range(8)]
        corpus = docs_from(texts)
        vocab = build_vocab(corpus, vocab_words + 10)
        cfg = BackboneConfig(dim=32, layers=1, heads=2, vocab_size=300,
                             prompt_len=4, mask_rate=mask_rate, max_len=64)
        bb = ToyBackbone(cfg, vocab, seed=0)
        return bb, [tokenize(d, vocab) for d in corpus], vocab

    def test_untrained_loss_near_log_vocab(self):
        bb, docs, vocab = self._setup()
        with torch.no_grad():
            loss, degenerate = bb.mlm_loss(docs, seed=0)
        assert not degenerate
        assert abs(float(loss) - math.log(len(vocab))) < 0.15 * math.log(len(vocab))

    def test_zero_mask_rate(self):
        bb, docs, _ = self._setup(mask_rate=0.0)
        loss, degenerate = bb.mlm_loss(docs, seed=0)
        assert degenerate and float(loss) == 0.0

    def test_cached_mode_unsupported(self):
        cache = EmbeddingCache(dim=8)
        cache.add("d0", ["a"], np.zeros((1, 8), dtype=np.float32))
        cb = CachedBackbone(cache)
        with pytest.raises(UnsupportedModeError):
            cb.mlm_loss([], seed=0)

    def test_mask_reproducibility(self):
        bb, docs, _ = self._setup()
        with torch.no_grad():
            a, _ = bb.mlm_loss(docs, seed=5)
            b, _ = bb.mlm_loss(docs, seed=5)
            c, _ = bb.mlm_loss(docs, seed=6)
        assert float(a) == float(b)
        assert float(a) != float(c)

    def test_prompt_only_training(self):
        texts = [" ".join(f"w{j}" for j in range(10)) for _ in range(4)]
        corpus = docs_from(texts)
        vocab = build_vocab(corpus, 50)
        cfg = BackboneConfig(dim=32, layers=1, heads=2, vocab_size=60,
                             prompt_len=4, freeze_base=True, max_len=64)
        bb = ToyBackbone(cfg, vocab, seed=0)
        base_before = [p.detach().clone() for p in bb.base_parameters()]
        prompts_before = bb.prompts.detach().clone()
        opt = torch.optim.SGD([p for p in bb.parameters() if p.requires_grad], lr=0.1)
        loss, _ = bb.mlm_loss([tokenize(d, vocab) for d in corpus], seed=0)
        loss.backward()
        opt.step()
        for before, after in zip(base_before, bb.base_parameters()):
            assert torch.equal(before, after)
        assert not torch.equal(prompts_before, bb.prompts.detach())


class TestCache:
    def test_round_trip(self, tmp_path):
        cache = EmbeddingCache(dim=4)
        rng = np.random.default_rng(0)
        cache.add("doc-a", ["hello", "world"], rng.normal(size=(2, 4)).astype(np.float32))
        cache.add("doc-b", ["x"], rng.normal(size=(1, 4)).astype(np.float32))
        path = tmp_path / "cache.cwec"
        cache.save(path)
        loaded = EmbeddingCache.load(path)
        assert loaded.dim == 4
        assert loaded.docs.keys() == cache.docs.keys()
        for k in cache.docs:
            assert loaded.docs[k][0] == cache.docs[k][0]
            assert np.array_equal(loaded.docs[k][1], cache.docs[k][1])

    def test_committed_fixture_pins_byte_format(self, tmp_path):
        # tests/fixtures/tiny.cwec was written with raw struct packing,
        # independent of EmbeddingCache.save; it pins the on-disk layout.
        import pathlib
        fixture = pathlib.Path(__file__).parent / "fixtures" / "tiny.cwec"
        loaded = EmbeddingCache.load(fixture)
        assert loaded.dim == 3
        assert list(loaded.docs) == ["doc-a", "doc-b"]
        words, rows = loaded.docs["doc-a"]
        assert words == ["hello", "world"]
        assert np.array_equal(rows, np.array([[1.0, 2.0, 3.0],
                                              [-1.0, 0.5, 0.25]], dtype=np.float32))
        words_b, rows_b = loaded.docs["doc-b"]
        assert words_b == ["hello"]
        assert np.array_equal(rows_b, np.array([[4.0, 5.0, 6.0]], dtype=np.float32))
        # saving the loaded cache reproduces the fixture byte for byte
        out = tmp_path / "resaved.cwec"
        loaded.save(out)
        assert out.read_bytes() == fixture.read_bytes()

    def test_magic_check(self, tmp_path):
        path = tmp_path / "bad.cwec"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CacheFormatError):
            EmbeddingCache.load(path)

    def test_truncation_detected(self, tmp_path):
        cache = EmbeddingCache(dim=4)
        cache.add("a", ["w"], np.zeros((1, 4), dtype=np.float32))
        path = tmp_path / "c.cwec"
        cache.save(path)
        data = path.read_bytes()
        path.write_bytes(data[:-3])
        with pytest.raises(CacheFormatError):
            EmbeddingCache.load(path)

    def test_cache_miss(self):
        cache = EmbeddingCache(dim=4)
        cache.add("a", ["w"], np.zeros((1, 4), dtype=np.float32))
        cb = CachedBackbone(cache)
        from wordtopics.backbone import TokenizedDoc
        td = TokenizedDoc(doc_id="missing", words=["w"], token_ids=[1],
                          word_spans=[(0, 1)], mask=[True])
        with pytest.raises(CacheMissError):
            cb.embed([td])

    def test_cached_embed_returns_stored_rows(self):
        cache = EmbeddingCache(dim=4)
        rows = np.arange(8, dtype=np.float32).reshape(2, 4)
        cache.add("a", ["u", "v"], rows)
        cb = CachedBackbone(cache)
        from wordtopics.backbone import TokenizedDoc
        td = TokenizedDoc(doc_id="a", words=["u", "v"], token_ids=[1, 1],
                          word_spans=[(0, 1), (1, 2)], mask=[True, True])
        out = cb.embed([td])[0]
        assert out.source == "cached"
        assert np.array_equal(out.word_embeddings.numpy(), rows)
