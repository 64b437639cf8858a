"""Export contextualized word embeddings from a masked language model into a
binary cache consumable by the topic-modeling engine."""

from .export import (AlignmentError, CorpusError, ExportConfig, ExportError,
                     export, load_corpus, split_words, write_cache)

__all__ = ["AlignmentError", "CorpusError", "ExportConfig", "ExportError",
           "export", "load_corpus", "split_words", "write_cache"]
