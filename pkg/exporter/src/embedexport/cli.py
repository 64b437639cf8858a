"""Command-line entry point: export a corpus to a CWEC embedding cache.

Exit codes: 0 success, 2 usage/config error, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .export import (AlignmentError, CorpusError, ExportConfig, ExportError,
                     export)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embedexport",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="export word embeddings for a JSONL corpus")
    p.add_argument("--corpus", required=True, help="JSONL corpus path")
    p.add_argument("--model", required=True, help="model name or local path")
    p.add_argument("--layer", default="last",
                   help="'last', 'first', or a hidden-state index (default last)")
    p.add_argument("--out", required=True, help="output cache path")
    p.add_argument("--max-length", type=int, default=512)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--device", default="cpu")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("EMBEDEXPORT_LOG", "INFO"),
                        format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    layer: str | int = args.layer
    if layer not in ("last", "first"):
        try:
            layer = int(layer)
        except ValueError:
            print(f"error: invalid layer {args.layer!r}", file=sys.stderr)
            return 2
    try:
        config = ExportConfig(model=args.model, layer=layer,
                              max_length=args.max_length,
                              batch_size=args.batch_size, device=args.device)
        stats = export(args.corpus, config, args.out)
    except (CorpusError, AlignmentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}: {stats['docs']} docs, {stats['words']} words, "
          f"dim {stats['dim']}, {stats['truncated_docs']} truncated")
    return 0


if __name__ == "__main__":
    sys.exit(main())
