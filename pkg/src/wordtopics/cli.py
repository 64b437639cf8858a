"""Command-line entry point.

Commands: train, topics, infer, eval {coherence,diversity,classify,oov-split},
make-synthetic. Settings come from an optional JSON config file; explicit
flags override file values. Every command writes its resolved configuration
next to its outputs.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import backbone as bk
from . import corpus as cp
from . import evalsuite as ev
from . import model as md
from . import topics as tp

log = logging.getLogger("wordtopics")

USAGE_ERROR, DATA_ERROR, NUMERIC_ERROR = 2, 3, 4

DATA_ERRORS = (cp.CorpusError, bk.CacheMissError, bk.CacheFormatError,
               ev.EvalError, tp.TopicsError, FileNotFoundError)


class CliError(Exception):
    def __init__(self, message: str, code: int = USAGE_ERROR):
        super().__init__(message)
        self.code = code


def _require_path(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {p}", USAGE_ERROR)
    return p


def _merge_config(args: argparse.Namespace, parser_defaults: dict) -> dict:
    """defaults < config file < explicit CLI flags."""
    resolved = dict(parser_defaults)
    if getattr(args, "config", None):
        cfg_path = _require_path(args.config, "config file")
        with open(cfg_path, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(parser_defaults)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key in parser_defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _write_resolved(resolved: dict, out_path: Path) -> None:
    snap = out_path.with_name(out_path.name + ".config.json")
    with open(snap, "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


TRAIN_DEFAULTS = {
    "num_topics": 20, "epochs": 10, "dirichlet_alpha": 0.1, "batch_size": 16,
    "learning_rate": 1e-3, "warmup_fraction": 0.10, "seed": 0,
    "use_mi": True, "use_mlm": True, "use_rec": True,
    "use_mmd_theta": True, "use_mmd_phi": True, "importance_enabled": True,
    "negatives_per_doc": 0, "hidden": 256, "deterministic": True,
    "mode": "toy", "dim": 64, "layers": 2, "heads": 4, "vocab_size": 5000,
    "prompt_len": 10, "freeze_base": False, "mask_rate": 0.15, "max_len": 512,
}


def cmd_train(args) -> int:
    resolved = _merge_config(args, TRAIN_DEFAULTS)
    corpus_path = _require_path(args.corpus, "corpus")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = None
    if resolved["mode"] == "cached":
        if not args.cache:
            raise CliError("cached mode requires --cache")
        cache = bk.EmbeddingCache.load(_require_path(args.cache, "embedding cache"))

    docs = cp.load_corpus(corpus_path)
    bcfg = bk.BackboneConfig(
        mode=resolved["mode"], dim=resolved["dim"], layers=resolved["layers"],
        heads=resolved["heads"], vocab_size=resolved["vocab_size"],
        prompt_len=resolved["prompt_len"], freeze_base=resolved["freeze_base"],
        mask_rate=resolved["mask_rate"], max_len=resolved["max_len"])
    tcfg = md.TrainConfig(
        num_topics=resolved["num_topics"], epochs=resolved["epochs"],
        dirichlet_alpha=resolved["dirichlet_alpha"], batch_size=resolved["batch_size"],
        learning_rate=resolved["learning_rate"], warmup_fraction=resolved["warmup_fraction"],
        use_mi=resolved["use_mi"], use_mlm=resolved["use_mlm"], use_rec=resolved["use_rec"],
        use_mmd_theta=resolved["use_mmd_theta"], use_mmd_phi=resolved["use_mmd_phi"],
        importance_enabled=resolved["importance_enabled"],
        negatives_per_doc=resolved["negatives_per_doc"], hidden=resolved["hidden"],
        seed=resolved["seed"], deterministic=resolved["deterministic"])
    vocab = bk.build_vocab(docs, resolved["vocab_size"])
    model = md.build_model(tcfg, bcfg, vocab, cache=cache)
    try:
        history = md.train(docs, model, progress=not args.quiet)
    except md.ModelError as exc:
        if "non-finite" in str(exc):
            raise CliError(str(exc), NUMERIC_ERROR) from exc
        raise

    ckpt = out_dir / "checkpoint.pt"
    md.save_checkpoint(model, ckpt)
    hist_path = out_dir / "history.json"
    with open(hist_path, "w", encoding="utf-8") as fh:
        json.dump(history, fh, indent=2)
        fh.write("\n")
    resolved["corpus"] = str(corpus_path)
    _write_resolved(resolved, out_dir / "run")
    log.info("wrote %s and %s", ckpt, hist_path)
    return 0


def _load_model(args):
    ckpt = _require_path(args.checkpoint, "checkpoint")
    cache = None
    if getattr(args, "cache", None):
        cache = bk.EmbeddingCache.load(_require_path(args.cache, "embedding cache"))
    return md.load_checkpoint(ckpt, cache=cache)


def _inference_stream(model, docs):
    """Yield (doc, theta_d, thetas, weights) for non-empty docs; None theta
    entries for empty ones."""
    for doc in docs:
        try:
            theta_d, thetas, weights = model.infer_document(doc)
        except md.EmptyDocumentError:
            yield doc, None, None, None
            continue
        yield doc, theta_d, thetas, weights


def cmd_topics(args) -> int:
    model = _load_model(args)
    if args.num_topics is not None and args.num_topics != model.config.num_topics:
        raise CliError(
            f"checkpoint has {model.config.num_topics} topics, requested {args.num_topics}")
    docs = cp.load_corpus(_require_path(args.corpus, "corpus"))
    stoplist = tp.load_stoplist(_require_path(args.stoplist, "stoplist")) \
        if args.stoplist else set()

    matrix = tp.TopicWordMatrix(model.config.num_topics)
    for doc, theta_d, thetas, weights in _inference_stream(model, docs):
        if theta_d is None:
            continue
        for wtv, alpha in zip(thetas, weights.alpha):
            matrix.add(wtv.word, wtv.theta.values, float(alpha))
    if not matrix.counts:
        raise CliError("no words to aggregate", DATA_ERROR)
    if args.drop_frequent > 0:
        stoplist = stoplist | tp.most_frequent_words(matrix, args.drop_frequent)
    topics = [tp.top_words(matrix, z, k=args.k, stoplist=stoplist,
                           min_count=args.min_count)
              for z in range(model.config.num_topics)]
    out = Path(args.out)
    out.write_text(tp.topics_to_json(topics) + "\n", encoding="utf-8")
    _write_resolved({"checkpoint": args.checkpoint, "corpus": args.corpus,
                     "k": args.k, "min_count": args.min_count,
                     "drop_frequent": args.drop_frequent,
                     "stoplist": args.stoplist or None}, out)
    return 0


def cmd_infer(args) -> int:
    model = _load_model(args)
    docs = cp.load_corpus(_require_path(args.corpus, "corpus"))
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        for doc, theta_d, thetas, weights in _inference_stream(model, docs):
            if theta_d is None:
                fh.write(json.dumps({"doc_id": doc.id, "error": "empty document"}) + "\n")
                continue
            record = {
                "doc_id": doc.id,
                "label": doc.label,
                "theta_d": theta_d.theta_d.values.tolist(),
                "words": [{"word": w.word, "position": w.position,
                           "theta": w.theta.values.tolist(),
                           "alpha": float(a)}
                          for w, a in zip(thetas, weights.alpha)],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    _write_resolved({"checkpoint": args.checkpoint, "corpus": args.corpus}, out)
    return 0


def _write_report(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=2, ensure_ascii=False) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
        _write_resolved(report.get("config", {}), Path(out))
    else:
        sys.stdout.write(text)


def cmd_eval(args) -> int:
    if args.metric == "coherence":
        topics = json.loads(Path(_require_path(args.topics, "topics file")).read_text())
        reference = cp.load_corpus(_require_path(args.reference, "reference corpus"))
        index = ev.build_reference_index(reference, window_size=args.window)
        per_topic = []
        for t in topics:
            words = [w["word"] for w in t["words"]]
            res = ev.coherence_cv(words, index)
            per_topic.append({"topic": t["topic"], "coherence": res.value,
                              "missing_words": res.missing_words})
        report = {"metric": "coherence_cv",
                  "value": float(np.mean([t["coherence"] for t in per_topic])),
                  "config": {"window": args.window, "reference": args.reference,
                             "topics": args.topics},
                  "per_topic": per_topic}
    elif args.metric == "diversity":
        model = _load_model(args)
        topics = json.loads(Path(_require_path(args.topics, "topics file")).read_text())
        docs = cp.load_corpus(_require_path(args.corpus, "corpus"))
        occurrences = []
        for doc, theta_d, thetas, weights in _inference_stream(model, docs):
            if theta_d is None:
                continue
            emb = model.embed_doc(doc)
            rows = emb.word_embeddings.detach().double().numpy()
            for wtv, alpha, row in zip(thetas, weights.alpha, rows):
                occurrences.append((wtv.word, float(alpha), wtv.theta.values, row))
        lookup = ev.build_topic_embedding_lookup(occurrences, model.config.num_topics)
        word_lists = [[w["word"] for w in t["words"]] for t in topics]
        value = ev.diversity(word_lists, lookup)
        report = {"metric": "diversity", "value": value,
                  "config": {"checkpoint": args.checkpoint, "topics": args.topics,
                             "corpus": args.corpus}}
    elif args.metric == "classify":
        model = _load_model(args)
        docs = cp.load_corpus(_require_path(args.corpus, "corpus"))
        vectors, labels = [], []
        for doc, theta_d, _, _ in _inference_stream(model, docs):
            if theta_d is None or doc.label is None:
                continue
            vectors.append(theta_d.theta_d.values)
            labels.append(doc.label)
        if not labels:
            raise CliError("no labeled documents in corpus", DATA_ERROR)
        acc = ev.classify_probe(np.stack(vectors), labels,
                                folds=args.folds, seed=args.seed)
        report = {"metric": "classification_accuracy", "value": acc,
                  "config": {"folds": args.folds, "seed": args.seed,
                             "l2": ev.PROBE_L2, "iterations": ev.PROBE_ITERS,
                             "learning_rate": ev.PROBE_LR,
                             "checkpoint": args.checkpoint, "corpus": args.corpus}}
    elif args.metric == "oov-split":
        docs = cp.load_corpus(_require_path(args.corpus, "corpus"))
        split = ev.oov_split(docs, args.train_size, hi=args.hi, lo=args.lo,
                             seed=args.seed)
        report = {"metric": "oov_split",
                  "value": split.summary,
                  "config": {"train_size": args.train_size, "hi": args.hi,
                             "lo": args.lo, "seed": args.seed, "corpus": args.corpus},
                  "train": split.train, "test1": split.test1, "test2": split.test2,
                  "ratios": split.ratios}
    else:  # pragma: no cover
        raise CliError(f"unknown metric {args.metric!r}")
    _write_report(report, args.out)
    return 0


def cmd_make_synthetic(args) -> int:
    vocab = [f"word{i:03d}" for i in range(args.vocab_size)]
    planted = ev.make_planted_corpus(
        args.num_topics, vocab, args.docs_per_class, args.doc_len,
        concentration=args.concentration, seed=args.seed)
    out = Path(args.out)
    cp.save_corpus(planted.documents, out)
    truth = out.with_suffix(out.suffix + ".truth.json")
    truth.write_text(json.dumps({
        "num_topics": args.num_topics,
        "vocab": planted.vocab,
        "topic_word": planted.topic_word.tolist(),
        "labels": planted.labels}, indent=2) + "\n", encoding="utf-8")
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    _write_resolved(resolved | {"command": "make-synthetic"}, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wordtopics",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model on a JSONL corpus")
    p_train.add_argument("--corpus", required=True)
    p_train.add_argument("--out-dir", required=True)
    p_train.add_argument("--config", help="JSON config file; flags override it")
    p_train.add_argument("--cache", help="embedding cache for cached mode")
    p_train.add_argument("--quiet", action="store_true")
    for key, default in TRAIN_DEFAULTS.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            p_train.add_argument(flag, type=lambda s: s.lower() in ("1", "true", "yes"),
                                 default=None, metavar="BOOL")
        else:
            p_train.add_argument(flag, type=type(default), default=None)
    p_train.set_defaults(func=cmd_train)

    p_topics = sub.add_parser("topics", help="extract ranked topic-word lists")
    p_topics.add_argument("--checkpoint", required=True)
    p_topics.add_argument("--corpus", required=True)
    p_topics.add_argument("--out", required=True)
    p_topics.add_argument("--cache")
    p_topics.add_argument("--k", type=int, default=10)
    p_topics.add_argument("--min-count", type=int, default=1)
    p_topics.add_argument("--drop-frequent", type=int, default=10,
                          help="drop the N most frequent corpus words (default 10)")
    p_topics.add_argument("--stoplist")
    p_topics.add_argument("--num-topics", type=int, default=None,
                          help="sanity check against the checkpoint")
    p_topics.set_defaults(func=cmd_topics)

    p_infer = sub.add_parser("infer", help="per-document and per-word vectors as JSONL")
    p_infer.add_argument("--checkpoint", required=True)
    p_infer.add_argument("--corpus", required=True)
    p_infer.add_argument("--out", required=True)
    p_infer.add_argument("--cache")
    p_infer.set_defaults(func=cmd_infer)

    p_eval = sub.add_parser("eval", help="evaluation metrics")
    ev_sub = p_eval.add_subparsers(dest="metric", required=True)

    p_coh = ev_sub.add_parser("coherence")
    p_coh.add_argument("--topics", required=True)
    p_coh.add_argument("--reference", required=True)
    p_coh.add_argument("--window", type=int, default=110)
    p_coh.add_argument("--out")
    p_coh.set_defaults(func=cmd_eval)

    p_div = ev_sub.add_parser("diversity")
    p_div.add_argument("--checkpoint", required=True)
    p_div.add_argument("--corpus", required=True)
    p_div.add_argument("--topics", required=True)
    p_div.add_argument("--cache")
    p_div.add_argument("--out")
    p_div.set_defaults(func=cmd_eval)

    p_cls = ev_sub.add_parser("classify")
    p_cls.add_argument("--checkpoint", required=True)
    p_cls.add_argument("--corpus", required=True)
    p_cls.add_argument("--cache")
    p_cls.add_argument("--folds", type=int, default=5)
    p_cls.add_argument("--seed", type=int, default=0)
    p_cls.add_argument("--out")
    p_cls.set_defaults(func=cmd_eval)

    p_oov = ev_sub.add_parser("oov-split")
    p_oov.add_argument("--corpus", required=True)
    p_oov.add_argument("--train-size", type=int, required=True)
    p_oov.add_argument("--hi", type=float, default=0.9)
    p_oov.add_argument("--lo", type=float, default=0.7)
    p_oov.add_argument("--seed", type=int, default=0)
    p_oov.add_argument("--out")
    p_oov.set_defaults(func=cmd_eval)

    p_syn = sub.add_parser("make-synthetic", help="generate a planted-topic corpus")
    p_syn.add_argument("--out", required=True)
    p_syn.add_argument("--num-topics", type=int, default=3)
    p_syn.add_argument("--vocab-size", type=int, default=300)
    p_syn.add_argument("--docs-per-class", type=int, default=200)
    p_syn.add_argument("--doc-len", type=int, default=30)
    p_syn.add_argument("--concentration", type=float, default=0.1)
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("WORDTOPICS_LOG", "INFO"),
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except md.ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NUMERIC_ERROR if "non-finite" in str(exc) else DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
