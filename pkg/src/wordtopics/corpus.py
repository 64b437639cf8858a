"""Corpus records and JSONL ingestion.

Corpus format: one JSON object per line, {"id": str, "text": str, "label": str?}.
Malformed lines are hard errors so downstream metrics stay trustworthy.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

WORD_RE = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)*")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class DocumentRecord:
    id: str
    text: str
    label: str | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise CorpusError(f"document {self.id!r} has empty text")


def split_words(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation.

    This normalization rule is shared verbatim with the embedding exporter;
    changing it breaks cache alignment.
    """
    return WORD_RE.findall(text.lower())


def load_corpus(path: str | Path) -> list[DocumentRecord]:
    docs: list[DocumentRecord] = []
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
            label = obj.get("label")
            docs.append(DocumentRecord(id=doc_id, text=str(obj["text"]),
                                       label=None if label is None else str(label)))
    if not docs:
        raise CorpusError(f"{path}: corpus is empty")
    return docs


def save_corpus(docs: list[DocumentRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            obj = {"id": doc.id, "text": doc.text}
            if doc.label is not None:
                obj["label"] = doc.label
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
