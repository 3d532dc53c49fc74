"""Operator surface: ingest data, run either party, run the centralized
oracle, evaluate checkpoints, and run the two-party loopback demo.

Exit codes: 0 success, 1 usage/config error, 2 protocol or training abort,
3 data/format error.  FEDSPLIT_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import socket
import sys

import numpy as np

from . import __version__
from .data import (
    file_digest,
    ingest_clickbait_challenge,
    load_embeddings,
    load_party_corpus,
    stopwords_digest,
)
from .errors import (
    ConfigError,
    DataError,
    FedsplitError,
    FormatError,
    MetricError,
    ProtocolError,
    TrainingError,
)
from .data import pad_batch
from .metrics import evaluate
from .models import Tape, init_model, hhn_logits, load_into, read_checkpoint
from .protocol import DEFAULT_PORT, Connection
from .synthetic import generate_interaction_records, interaction_corpora, write_party_files
from .tensor import softmax_cross_entropy
from .training import (
    ALL_GROUPS,
    TrainConfig,
    equivalence_report,
    merged_federated_tensors,
    run_federated_pair,
    run_party_a,
    run_party_b,
    train_centralized,
)

log = logging.getLogger("fedsplit")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _setup_logging() -> None:
    level = os.environ.get("FEDSPLIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _load_config(args) -> TrainConfig:
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            config = TrainConfig.from_json(f.read())
    else:
        config = TrainConfig()
    for flag, attr in (("seed", "shared_seed"), ("epochs", "max_epochs"),
                       ("batch_size", "batch_size"), ("lr", "lr"),
                       ("extractor", "extractor")):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config, attr, value)
    config.__post_init__()
    return config


def _write_manifest(out_dir, config: TrainConfig, corpus_paths: dict,
                    embedding_paths: dict, command: str) -> None:
    """Reproducibility record; equal manifests must mean equal checkpoints."""
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "code_version": __version__,
        "config": json.loads(config.to_json()),
        "config_digest": config.protocol_digest().hex(),
        "shared_seed": config.shared_seed,
        "stopwords_digest": stopwords_digest(),
        "corpus_digests": {k: file_digest(p) for k, p in corpus_paths.items()},
        "embedding_digests": {k: file_digest(p) for k, p in embedding_paths.items()},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise ConfigError(f"bad host:port {text!r}")
    return host or "127.0.0.1", int(port)


def _maybe_embeddings(path, vocab, config: TrainConfig):
    if path is None:
        return None
    table, hit_rate = load_embeddings(path, vocab, dim=config.embedding_dim,
                                      trainable=config.trainable_embeddings)
    log.info("embedding hit rate: %.3f", hit_rate)
    return table


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    stats = ingest_clickbait_challenge(args.instances, args.truth,
                                       args.out_a, args.out_b,
                                       use_paragraphs=args.paragraphs)
    print(json.dumps(stats))
    return 0


def cmd_party_a(args) -> int:
    config = _load_config(args)
    corpus = load_party_corpus(args.corpus, "title", config.title_max_len,
                               config.vocab_min_freq, with_labels=True)
    _write_manifest(args.out, config, {"corpus_a": args.corpus},
                    {"embeddings": args.embeddings} if args.embeddings else {},
                    "party-a")
    table = _maybe_embeddings(args.embeddings, corpus.vocab, config)
    host, port = _parse_endpoint(args.listen)
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        log.info("party A listening on %s:%d", host, port)
        peer, addr = server.accept()
        log.info("party B connected from %s", addr)
        conn = Connection(peer, timeout=config.timeout_s)
        result = run_party_a(config, corpus, conn, out_dir=args.out,
                             resume=args.resume, title_table=table)
    print(json.dumps({"final_epoch": result["final_epoch"],
                      "aligned_samples": result["alignment_size"]}))
    return 0


def cmd_party_b(args) -> int:
    config = _load_config(args)
    corpus = load_party_corpus(args.corpus, "content", config.content_max_len,
                               config.vocab_min_freq, with_labels=False)
    _write_manifest(args.out, config, {"corpus_b": args.corpus},
                    {"embeddings": args.embeddings} if args.embeddings else {},
                    "party-b")
    table = _maybe_embeddings(args.embeddings, corpus.vocab, config)
    host, port = _parse_endpoint(args.connect)
    sock = socket.create_connection((host, port), timeout=config.timeout_s)
    conn = Connection(sock, timeout=config.timeout_s)
    result = run_party_b(config, corpus, conn, out_dir=args.out,
                         resume=args.resume, content_table=table)
    print(json.dumps({"final_epoch": result["final_epoch"]}))
    return 0


def cmd_central(args) -> int:
    config = _load_config(args)
    corpus_a = load_party_corpus(args.corpus_a, "title", config.title_max_len,
                                 config.vocab_min_freq, with_labels=True)
    corpus_b = load_party_corpus(args.corpus_b, "content", config.content_max_len,
                                 config.vocab_min_freq, with_labels=False)
    embeddings = {}
    if args.embeddings_a:
        embeddings["embeddings_a"] = args.embeddings_a
    if args.embeddings_b:
        embeddings["embeddings_b"] = args.embeddings_b
    _write_manifest(args.out, config,
                    {"corpus_a": args.corpus_a, "corpus_b": args.corpus_b},
                    embeddings, "central")
    result = train_centralized(
        config, corpus_a, corpus_b, out_dir=args.out,
        title_table=_maybe_embeddings(args.embeddings_a, corpus_a.vocab, config),
        content_table=_maybe_embeddings(args.embeddings_b, corpus_b.vocab, config))
    val_rows = [r for r in result["history"] if r["split"] == "val"]
    print(json.dumps({"final_epoch": result["final_epoch"],
                      "last_val": val_rows[-1] if val_rows else None}))
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args)
    corpus_a = load_party_corpus(args.corpus_a, "title", config.title_max_len,
                                 config.vocab_min_freq, with_labels=True)
    corpus_b = load_party_corpus(args.corpus_b, "content", config.content_max_len,
                                 config.vocab_min_freq, with_labels=False)
    if args.checkpoint:
        spec, _, tensors = read_checkpoint(args.checkpoint)
    else:
        spec, _, tensors = read_checkpoint(args.checkpoint_a)
        spec_b, _, tensors_b = read_checkpoint(args.checkpoint_b)
        if spec_b != spec:
            raise ConfigError("party checkpoints disagree on the model spec")
        tensors.update(tensors_b)
    if spec != config.model_spec():
        raise ConfigError("checkpoint model spec does not match the config")
    params = init_model(spec, config.shared_seed,
                        title_vocab=corpus_a.vocab.size,
                        content_vocab=corpus_b.vocab.size,
                        title_words=corpus_a.vocab.words,
                        content_words=corpus_b.vocab.words,
                        trainable_embeddings=config.trainable_embeddings,
                        groups=ALL_GROUPS)
    load_into(params, tensors, ALL_GROUPS)

    ids = [rid for rid in corpus_a.ids if rid in corpus_b.records]
    if not ids:
        raise DataError("no overlapping ids between the two corpora")
    scores, labels = [], []
    for i in range(0, len(ids), config.batch_size):
        chunk = ids[i:i + config.batch_size]
        batch_a = [corpus_a.records[r] for r in chunk]
        batch_b = [corpus_b.records[r] for r in chunk]
        ta = pad_batch([r.tokens for r in batch_a], [r.label for r in batch_a])
        tb = pad_batch([r.tokens for r in batch_b])
        tape = Tape()
        logits = hhn_logits(tape, params, ta.ids, ta.lengths, tb.ids, tb.lengths)
        _, probs = softmax_cross_entropy(tape, logits, ta.labels)
        scores.extend(probs.data[:, 1].tolist())
        labels.extend(ta.labels.tolist())
    result = evaluate(np.asarray(scores), np.asarray(labels), config.threshold)
    print(json.dumps({"n": result.n, "roc_auc": result.roc_auc, "f1": result.f1,
                      "accuracy": result.accuracy}))
    return 0


def cmd_demo(args) -> int:
    config = _load_config(args)
    config.max_epochs = args.epochs
    config.patience = max(config.patience, args.epochs)
    if args.small_model:
        config.embedding_dim = 32
        config.lstm_hidden = 16
        config.conn_filters = {1: 16, 2: 16}
    ca, cb = interaction_corpora(args.synthetic, config.shared_seed,
                                 config.title_max_len, config.content_max_len)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        records = generate_interaction_records(args.synthetic, config.shared_seed)
        write_party_files(records, os.path.join(args.out, "synthetic_a.jsonl"),
                          os.path.join(args.out, "synthetic_b.jsonl"))
        _write_manifest(args.out, config,
                        {"corpus_a": os.path.join(args.out, "synthetic_a.jsonl"),
                         "corpus_b": os.path.join(args.out, "synthetic_b.jsonl")},
                        {}, "demo")
    print(f"demo: {args.synthetic} synthetic samples, seed {config.shared_seed}, "
          f"{config.max_epochs} epochs")
    fed = run_federated_pair(config, ca, cb, out_dir_a=args.out, out_dir_b=args.out)
    central = train_centralized(config, ca, cb, out_dir=args.out)
    fed_tensors = merged_federated_tensors(fed)
    central_tensors = {n: t.data for n, t in
                       central["params"].named_tensors(ALL_GROUPS)}
    report = equivalence_report(fed_tensors, central_tensors)
    for row in central["history"]:
        if row["split"] == "val":
            print(f"  epoch {row['epoch']}: val loss {row['loss']:.4f} "
                  f"auc {row['roc_auc']}")
    print(f"federated == centralized (bitwise): {report['bitwise_equal']} "
          f"(max rel diff {report['max_rel_diff']:.3g})")
    if not report["bitwise_equal"] and report["max_rel_diff"] >= 1e-6:
        print("EQUIVALENCE CHECK FAILED", file=sys.stderr)
        return 2
    print("equivalence check passed")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck
    failures = run_gradcheck(seeds=args.seeds, verbose=True)
    return 0 if failures == 0 else 2


def build_parser() -> _Parser:
    p = _Parser(prog="fedsplit", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="split a Clickbait Challenge corpus into party files")
    sp.add_argument("--instances", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--out-a", required=True)
    sp.add_argument("--out-b", required=True)
    sp.add_argument("--paragraphs", action="store_true",
                    help="use targetParagraphs instead of targetDescription")
    sp.set_defaults(func=cmd_ingest)

    def add_train_flags(sp, with_seed=True):
        sp.add_argument("--config", help="JSON config file")
        if with_seed:
            sp.add_argument("--seed", type=int, help="override shared_seed")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--extractor", choices=("san", "cnn", "rnn", "fasttext"))

    sp = sub.add_parser("party-a", help="run the label-holding party (listens)")
    sp.add_argument("--listen", default=f"127.0.0.1:{DEFAULT_PORT}")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out")
    sp.add_argument("--resume")
    sp.add_argument("--embeddings")
    add_train_flags(sp)
    sp.set_defaults(func=cmd_party_a)

    sp = sub.add_parser("party-b", help="run the content-holding party (connects)")
    sp.add_argument("--connect", default=f"127.0.0.1:{DEFAULT_PORT}")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out")
    sp.add_argument("--resume")
    sp.add_argument("--embeddings")
    add_train_flags(sp)
    sp.set_defaults(func=cmd_party_b)

    sp = sub.add_parser("central", help="train the centralized oracle")
    sp.add_argument("--corpus-a", required=True)
    sp.add_argument("--corpus-b", required=True)
    sp.add_argument("--out")
    sp.add_argument("--embeddings-a")
    sp.add_argument("--embeddings-b")
    add_train_flags(sp)
    sp.set_defaults(func=cmd_central)

    sp = sub.add_parser("eval", help="evaluate checkpoints on a joined corpus")
    sp.add_argument("--corpus-a", required=True)
    sp.add_argument("--corpus-b", required=True)
    sp.add_argument("--checkpoint", help="central checkpoint with all thetas")
    sp.add_argument("--checkpoint-a", help="party A checkpoint (with --checkpoint-b)")
    sp.add_argument("--checkpoint-b")
    add_train_flags(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("demo", help="two-party loopback run + equivalence verdict")
    sp.add_argument("--synthetic", type=int, default=64, help="sample count")
    sp.add_argument("--epochs", type=int, default=3)
    sp.add_argument("--out")
    sp.add_argument("--small-model", action="store_true",
                    help="reduced dims for a faster demo")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--extractor", choices=("san", "cnn", "rnn", "fasttext"))
    sp.set_defaults(func=cmd_demo)

    sp = sub.add_parser("gradcheck", help="finite-difference checks for every layer")
    sp.add_argument("--seeds", type=int, default=3)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "checkpoint", "skip") is None and (
            getattr(args, "checkpoint_a", None) is None
            or getattr(args, "checkpoint_b", None) is None):
        parser.error("eval needs --checkpoint or both --checkpoint-a/--checkpoint-b")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ProtocolError, TrainingError) as exc:
        print(f"abort: {exc}", file=sys.stderr)
        return 2
    except (DataError, FormatError, MetricError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except FedsplitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
