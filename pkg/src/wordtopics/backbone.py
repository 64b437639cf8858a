"""Word-level contextualized embeddings: a small trainable transformer with
soft prompts and an MLM head (toy mode), or a read-only precomputed cache.

Both sources emit the same ContextualEmbeddingDoc, so everything downstream
is indifferent to where embeddings came from.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .corpus import DocumentRecord, split_words

PAD, UNK, CLS, MASK = "[PAD]", "[UNK]", "[CLS]", "[MASK]"
SPECIALS = [PAD, UNK, CLS, MASK]

CACHE_MAGIC = b"CWEC"
CACHE_VERSION = 1


class BackboneError(ValueError):
    pass


class UnsupportedModeError(BackboneError):
    pass


class CacheMissError(KeyError):
    pass


class CacheFormatError(ValueError):
    pass


class Vocabulary:
    """Word-level vocabulary: 4 specials + the most frequent corpus words."""

    def __init__(self, words: list[str]):
        self.id_to_word = SPECIALS + list(words)
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise BackboneError("duplicate words in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_word)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id

    @property
    def pad_id(self) -> int:
        return self.word_to_id[PAD]

    @property
    def unk_id(self) -> int:
        return self.word_to_id[UNK]

    @property
    def cls_id(self) -> int:
        return self.word_to_id[CLS]

    @property
    def mask_id(self) -> int:
        return self.word_to_id[MASK]

    def lookup(self, word: str) -> int:
        return self.word_to_id.get(word, self.unk_id)


def build_vocab(corpus: list[DocumentRecord], max_size: int) -> Vocabulary:
    """Most frequent lowercased words, ties broken lexicographically."""
    if not corpus:
        raise BackboneError("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for doc in corpus:
        counts.update(split_words(doc.text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([w for w, _ in ranked[:max_size]])


@dataclass
class TokenizedDoc:
    doc_id: str
    words: list[str]
    token_ids: list[int]
    word_spans: list[tuple[int, int]]
    mask: list[bool]


def tokenize(doc: DocumentRecord, vocab: Vocabulary) -> TokenizedDoc:
    """One token per word; OOV words keep their surface string but map to [UNK]."""
    words = split_words(doc.text)
    token_ids = [vocab.lookup(w) for w in words]
    spans = [(i, i + 1) for i in range(len(words))]
    return TokenizedDoc(doc_id=doc.id, words=words, token_ids=token_ids,
                        word_spans=spans, mask=[True] * len(words))


@dataclass
class ContextualEmbeddingDoc:
    doc_id: str
    word_embeddings: torch.Tensor  # (num_words, dim)
    words: list[str]
    source: str  # "toy" or "cached"

    def __post_init__(self):
        if self.word_embeddings.shape[0] != len(self.words):
            raise BackboneError(
                f"doc {self.doc_id!r}: {self.word_embeddings.shape[0]} embedding rows "
                f"for {len(self.words)} words")


@dataclass
class BackboneConfig:
    mode: str = "toy"
    dim: int = 64
    layers: int = 2
    heads: int = 4
    vocab_size: int = 5000
    prompt_len: int = 10
    freeze_base: bool = False
    mask_rate: float = 0.15
    max_len: int = 512

    def __post_init__(self):
        if self.mode not in ("toy", "cached"):
            raise BackboneError(f"unknown mode {self.mode!r}")
        if self.prompt_len < 0:
            raise BackboneError("prompt_len must be >= 0")
        if not 0.0 <= self.mask_rate < 1.0:
            raise BackboneError("mask_rate must be in [0, 1)")
        if self.dim % self.heads != 0:
            raise BackboneError("dim must be divisible by heads")


class ToyBackbone(nn.Module):
    """Small transformer encoder over [prompts] + [CLS] + word tokens.

    Prompt vectors are always trainable; with freeze_base=True everything
    else except the MLM head is frozen.
    """

    def __init__(self, config: BackboneConfig, vocab: Vocabulary, seed: int = 0):
        super().__init__()
        if config.mode != "toy":
            raise UnsupportedModeError("ToyBackbone requires mode='toy'")
        self.config = config
        self.vocab = vocab
        gen = torch.Generator().manual_seed(seed)

        d = config.dim
        self.token_emb = nn.Embedding(len(vocab), d, padding_idx=vocab.pad_id)
        self.pos_emb = nn.Embedding(config.max_len + config.prompt_len + 1, d)
        self.prompts = nn.Parameter(torch.empty(config.prompt_len, d))
        layer = nn.TransformerEncoderLayer(
            d_model=d, nhead=config.heads, dim_feedforward=4 * d,
            batch_first=True, dropout=0.0)
        self.encoder = nn.TransformerEncoder(layer, num_layers=config.layers,
                                             enable_nested_tensor=False)
        self.mlm_head = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, len(vocab)))
        self._init_weights(gen)
        if config.freeze_base:
            self.freeze_base_weights()

    def _init_weights(self, gen: torch.Generator) -> None:
        with torch.no_grad():
            for p in self.parameters():
                if p.ndim >= 2:
                    nn.init.normal_(p, std=0.02, generator=gen)
                else:
                    p.zero_()
            # nn.TransformerEncoderLayer zero biases are fine; LayerNorm
            # weights must be 1, not 0.
            for mod in self.modules():
                if isinstance(mod, nn.LayerNorm):
                    mod.weight.fill_(1.0)
            self.token_emb.weight[self.vocab.pad_id].zero_()

    def base_parameters(self):
        head_ids = {id(p) for p in self.mlm_head.parameters()}
        for name, p in self.named_parameters():
            if name == "prompts" or id(p) in head_ids:
                continue
            yield p

    def freeze_base_weights(self) -> None:
        for p in self.base_parameters():
            p.requires_grad_(False)

    def _forward_states(self, docs: list[TokenizedDoc],
                        token_override: torch.Tensor | None = None):
        """Hidden states for each doc; returns (states, lengths).

        states is (batch, prompt_len + 1 + max_words, dim); word rows start
        at offset prompt_len + 1.
        """
        if not docs:
            raise BackboneError("empty batch")
        lengths = [len(d.token_ids) for d in docs]
        max_words = max(lengths) if lengths else 0
        if max_words > self.config.max_len:
            raise BackboneError(
                f"document length {max_words} exceeds max_len {self.config.max_len}")
        b = len(docs)
        ids = torch.full((b, max_words), self.vocab.pad_id, dtype=torch.long)
        for i, d in enumerate(docs):
            if d.token_ids:
                ids[i, :len(d.token_ids)] = torch.tensor(d.token_ids, dtype=torch.long)
        if token_override is not None:
            ids = token_override
        p = self.config.prompt_len
        cls_col = torch.full((b, 1), self.vocab.cls_id, dtype=torch.long)
        tok = self.token_emb(torch.cat([cls_col, ids], dim=1))
        prompt_block = self.prompts.unsqueeze(0).expand(b, -1, -1)
        x = torch.cat([prompt_block, tok], dim=1)
        pos = torch.arange(x.shape[1])
        x = x + self.pos_emb(pos).unsqueeze(0)
        pad_mask = torch.zeros(b, x.shape[1], dtype=torch.bool)
        for i, n in enumerate(lengths):
            pad_mask[i, p + 1 + n:] = True
        states = self.encoder(x, src_key_padding_mask=pad_mask)
        return states, lengths, ids

    def embed(self, docs: list[TokenizedDoc]) -> list[ContextualEmbeddingDoc]:
        states, lengths, _ = self._forward_states(docs)
        offset = self.config.prompt_len + 1
        out = []
        for i, d in enumerate(docs):
            rows = states[i, offset:offset + lengths[i]]
            out.append(ContextualEmbeddingDoc(
                doc_id=d.doc_id, word_embeddings=rows, words=list(d.words), source="toy"))
        return out

    def mlm_loss(self, docs: list[TokenizedDoc], seed: int) -> tuple[torch.Tensor, bool]:
        """Masked-LM cross-entropy at masked positions; (loss, degenerate_flag).

        Masking: mask_rate of word positions; of those 80% -> [MASK],
        10% -> random token, 10% unchanged. Selection is seeded.
        """
        rate = self.config.mask_rate
        lengths = [len(d.token_ids) for d in docs]
        max_words = max(lengths) if lengths else 0
        b = len(docs)
        ids = torch.full((b, max_words), self.vocab.pad_id, dtype=torch.long)
        real = torch.zeros(b, max_words, dtype=torch.bool)
        for i, d in enumerate(docs):
            if d.token_ids:
                ids[i, :len(d.token_ids)] = torch.tensor(d.token_ids, dtype=torch.long)
                real[i, :len(d.token_ids)] = True
        gen = torch.Generator().manual_seed(seed)
        u = torch.rand(b, max_words, generator=gen)
        selected = real & (u < rate)
        if not selected.any():
            return torch.zeros((), dtype=torch.float32), True
        labels = ids.clone()
        action = torch.rand(b, max_words, generator=gen)
        corrupted = ids.clone()
        use_mask = selected & (action < 0.8)
        use_rand = selected & (action >= 0.8) & (action < 0.9)
        corrupted[use_mask] = self.vocab.mask_id
        rand_ids = torch.randint(len(SPECIALS), len(self.vocab), (b, max_words), generator=gen)
        corrupted[use_rand] = rand_ids[use_rand]
        states, _, _ = self._forward_states(docs, token_override=corrupted)
        offset = self.config.prompt_len + 1
        word_states = states[:, offset:offset + max_words]
        logits = self.mlm_head(word_states[selected])
        loss = nn.functional.cross_entropy(logits, labels[selected])
        return loss, False


class CachedBackbone:
    """Read-only embedding source backed by a CWEC cache file."""

    def __init__(self, cache: "EmbeddingCache"):
        self.cache = cache

    @property
    def dim(self) -> int:
        return self.cache.dim

    def embed(self, docs: list[TokenizedDoc]) -> list[ContextualEmbeddingDoc]:
        out = []
        for d in docs:
            if d.doc_id not in self.cache.docs:
                raise CacheMissError(f"doc id {d.doc_id!r} not in embedding cache")
            words, rows = self.cache.docs[d.doc_id]
            out.append(ContextualEmbeddingDoc(
                doc_id=d.doc_id,
                word_embeddings=torch.from_numpy(rows.copy()),
                words=list(words), source="cached"))
        return out

    def mlm_loss(self, docs, seed):
        raise UnsupportedModeError("MLM is only available with the toy backbone")


class EmbeddingCache:
    """CWEC binary cache of per-document word embeddings.

    Layout (little-endian): magic "CWEC" | u32 version=1 | u32 dim |
    u64 doc_count | per doc: u16 id_len, id bytes, u32 word_count,
    per word: u16 word_len, word bytes, dim * f32.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.docs: dict[str, tuple[list[str], np.ndarray]] = {}

    def add(self, doc_id: str, words: list[str], rows: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.float32)
        if rows.shape != (len(words), self.dim):
            raise CacheFormatError(
                f"doc {doc_id!r}: rows shape {rows.shape} != ({len(words)}, {self.dim})")
        if doc_id in self.docs:
            raise CacheFormatError(f"duplicate doc id {doc_id!r}")
        self.docs[doc_id] = (list(words), rows)

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<II", CACHE_VERSION, self.dim))
            fh.write(struct.pack("<Q", len(self.docs)))
            for doc_id, (words, rows) in self.docs.items():
                id_bytes = doc_id.encode("utf-8")
                fh.write(struct.pack("<H", len(id_bytes)))
                fh.write(id_bytes)
                fh.write(struct.pack("<I", len(words)))
                for word, row in zip(words, rows):
                    wb = word.encode("utf-8")
                    fh.write(struct.pack("<H", len(wb)))
                    fh.write(wb)
                    fh.write(row.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingCache":
        with open(path, "rb") as fh:
            data = fh.read()
        off = 0

        def take(n: int) -> bytes:
            nonlocal off
            if off + n > len(data):
                raise CacheFormatError(f"{path}: truncated at byte {off}")
            chunk = data[off:off + n]
            off += n
            return chunk

        if take(4) != CACHE_MAGIC:
            raise CacheFormatError(f"{path}: bad magic")
        version, dim = struct.unpack("<II", take(8))
        if version != CACHE_VERSION:
            raise CacheFormatError(f"{path}: unsupported version {version}")
        (doc_count,) = struct.unpack("<Q", take(8))
        cache = cls(dim)
        for _ in range(doc_count):
            (id_len,) = struct.unpack("<H", take(2))
            doc_id = take(id_len).decode("utf-8")
            (word_count,) = struct.unpack("<I", take(4))
            words = []
            rows = np.empty((word_count, dim), dtype=np.float32)
            for w in range(word_count):
                (word_len,) = struct.unpack("<H", take(2))
                words.append(take(word_len).decode("utf-8"))
                rows[w] = np.frombuffer(take(4 * dim), dtype="<f4")
            cache.add(doc_id, words, rows)
        if off != len(data):
            raise CacheFormatError(f"{path}: {len(data) - off} trailing bytes")
        return cache
