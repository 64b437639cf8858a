"""Export contextualized word embeddings to the CWEC binary cache.

Reads a JSONL corpus ({"id": str, "text": str, ...} per line), runs each
document through a masked language model, mean-pools subword vectors to the
word level using the tokenizer's word alignment, and writes one f32 vector
per word occurrence.

CWEC layout (little-endian): magic "CWEC" | u32 version=1 | u32 dim |
u64 doc_count | per doc: u16 id_len, id bytes, u32 word_count,
per word: u16 word_len, word bytes, dim * f32.
"""

from __future__ import annotations

import json
import logging
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

log = logging.getLogger("embedexport")

CACHE_MAGIC = b"CWEC"
CACHE_VERSION = 1

# Word normalization shared verbatim with the consuming engine; changing it
# breaks cache alignment.
WORD_RE = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)*")


class ExportError(Exception):
    pass


class CorpusError(ExportError):
    pass


class AlignmentError(ExportError):
    pass


def split_words(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation."""
    return WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class ExportConfig:
    """Settings for a single export run.

    `layer` selects which hidden-state layer supplies the vectors:
    "last", "first", or a non-negative integer index (0 is the embedding
    layer output, 1 the first transformer layer, and so on).
    """

    model: str
    layer: str | int = "last"
    max_length: int = 512
    pooling: str = "mean"
    batch_size: int = 8
    device: str = "cpu"

    def __post_init__(self):
        if self.pooling != "mean":
            raise ExportError(f"unsupported pooling {self.pooling!r}")
        if self.max_length < 2:
            raise ExportError("max_length must be >= 2")
        if self.batch_size < 1:
            raise ExportError("batch_size must be >= 1")
        if isinstance(self.layer, str):
            if self.layer not in ("last", "first"):
                raise ExportError(f"layer must be 'last', 'first', or an index, "
                                  f"got {self.layer!r}")
        elif self.layer < 0:
            raise ExportError(f"layer index must be >= 0, got {self.layer}")


def load_corpus(path: str | Path) -> list[tuple[str, str]]:
    """Return (doc_id, text) pairs; malformed lines are hard errors."""
    docs: list[tuple[str, str]] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise CorpusError(f"{path}:{lineno}: expected object with 'id' and 'text'")
            doc_id = str(obj["id"])
            if doc_id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate document id {doc_id!r}")
            seen.add(doc_id)
            docs.append((doc_id, str(obj["text"])))
    if not docs:
        raise CorpusError(f"{path}: corpus is empty")
    return docs


def _resolve_layer(layer: str | int, num_hidden_states: int) -> int:
    """Map a layer selector to an index into output.hidden_states."""
    if layer == "last":
        return num_hidden_states - 1
    if layer == "first":
        return 1
    idx = int(layer)
    if idx >= num_hidden_states:
        raise ExportError(
            f"layer index {idx} out of range; model has hidden states 0.."
            f"{num_hidden_states - 1}")
    return idx


def _pool_words(doc_id: str, words: list[str], word_ids: list[int | None],
                hidden: torch.Tensor) -> tuple[list[str], np.ndarray]:
    """Mean-pool subword rows per word; returns retained words and vectors.

    Words wholly beyond the truncation point are dropped (and counted by the
    caller); a skipped word inside the retained range is an alignment error.
    """
    groups: dict[int, list[int]] = {}
    for pos, wid in enumerate(word_ids):
        if wid is not None:
            groups.setdefault(wid, []).append(pos)
    if not groups:
        raise AlignmentError(f"doc {doc_id!r}: no word produced any subword")
    last_wid = max(groups)
    for wid in range(last_wid + 1):
        if wid not in groups:
            raise AlignmentError(
                f"doc {doc_id!r}: word {words[wid]!r} (index {wid}) produced "
                f"no subwords")
    kept = words[:last_wid + 1]
    rows = np.stack([hidden[groups[wid]].mean(dim=0).numpy()
                     for wid in range(last_wid + 1)]).astype(np.float32)
    return kept, rows


def export(corpus_path: str | Path, config: ExportConfig,
           out_path: str | Path) -> dict:
    """Run the export; returns summary stats (docs, words, truncated docs)."""
    docs = load_corpus(corpus_path)
    tokenizer = AutoTokenizer.from_pretrained(config.model)
    model = AutoModel.from_pretrained(config.model)
    model.eval()
    device = torch.device(config.device)
    model.to(device)

    model_limit = getattr(model.config, "max_position_embeddings", None)
    if model_limit is not None and config.max_length > model_limit:
        raise ExportError(
            f"max_length {config.max_length} exceeds model limit {model_limit}")

    results: list[tuple[str, list[str], np.ndarray]] = []
    truncated = 0
    dim = None
    with torch.no_grad():
        for start in range(0, len(docs), config.batch_size):
            batch = docs[start:start + config.batch_size]
            batch_words = [split_words(text) for _, text in batch]
            for (doc_id, _), words in zip(batch, batch_words):
                if not words:
                    raise CorpusError(f"doc {doc_id!r} has no words after "
                                      "normalization")
            enc = tokenizer(batch_words, is_split_into_words=True,
                            truncation=True, max_length=config.max_length,
                            padding=True, return_tensors="pt")
            out = model(**{k: v.to(device) for k, v in enc.items()},
                        output_hidden_states=True)
            layer_idx = _resolve_layer(config.layer, len(out.hidden_states))
            hidden = out.hidden_states[layer_idx].cpu()
            dim = hidden.shape[-1]
            for i, ((doc_id, _), words) in enumerate(zip(batch, batch_words)):
                kept, rows = _pool_words(doc_id, words, enc.word_ids(i), hidden[i])
                if len(kept) < len(words):
                    truncated += 1
                    log.info("doc %r truncated: kept %d of %d words",
                             doc_id, len(kept), len(words))
                results.append((doc_id, kept, rows))

    write_cache(out_path, dim, results)
    total_words = sum(len(w) for _, w, _ in results)
    log.info("exported %d docs, %d words, dim %d (%d truncated) to %s",
             len(results), total_words, dim, truncated, out_path)
    return {"docs": len(results), "words": total_words, "dim": int(dim),
            "truncated_docs": truncated}


def write_cache(path: str | Path, dim: int,
                docs: list[tuple[str, list[str], np.ndarray]]) -> None:
    """Write the CWEC file; single writer, document order preserved."""
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<II", CACHE_VERSION, dim))
        fh.write(struct.pack("<Q", len(docs)))
        for doc_id, words, rows in docs:
            if rows.shape != (len(words), dim):
                raise ExportError(
                    f"doc {doc_id!r}: rows shape {rows.shape} != ({len(words)}, {dim})")
            id_bytes = doc_id.encode("utf-8")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(struct.pack("<I", len(words)))
            for word, row in zip(words, rows):
                wb = word.encode("utf-8")
                fh.write(struct.pack("<H", len(wb)))
                fh.write(wb)
                fh.write(np.asarray(row, dtype="<f4").tobytes())
