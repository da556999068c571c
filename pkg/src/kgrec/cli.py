"""Command-line entry points.

Subcommands: prepare, pretrain-kg, augment, train, eval, ablation-matrix,
serve. Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import corpus, kg, rgcn
from .checkpoint import CheckpointError
from .config import ConfigError, parse_kv
from .evaluation import evaluate, format_table
from .model import ModelConfig
from .rgcn import RgcnConfig
from .tensor import NumericError
from .trainer import (Checkpoint, TrainConfig, TrainError, VARIANT_KG, train,
                      build_test_samples)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="kgrec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="dump mention sequences from dialogs")
    p.add_argument("--dialogs", required=True)
    p.add_argument("--entities", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain-kg", help="pretrain entity embeddings")
    p.add_argument("--entities", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("augment", help="splice KG shortest paths into sequences")
    p.add_argument("--entities", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--sequences", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-hops", type=int, default=4)

    p = sub.add_parser("train")
    p.add_argument("--config", required=True)
    p.add_argument("--dialogs", required=True)
    p.add_argument("--entities", required=True)
    p.add_argument("--triples")
    p.add_argument("--embeddings")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("eval")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dialogs", required=True)
    p.add_argument("--entities", required=True)
    p.add_argument("--triples")
    p.add_argument("--out")

    p = sub.add_parser("ablation-matrix",
                       help="train and evaluate the full model plus its "
                            "four ablations, one combined report")
    p.add_argument("--config", required=True)
    p.add_argument("--dialogs", required=True)
    p.add_argument("--entities", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--out")

    p = sub.add_parser("serve")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--entities", required=True)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")
    return parser


def _load_corpus(args):
    load = corpus.load_dialogs(args.dialogs, args.entities)
    if load.dropped_mentions:
        print(f"warning: dropped {load.dropped_mentions} unknown mentions",
              file=sys.stderr)
    return load


def _split_sequences(load: corpus.CorpusLoad, seed: int):
    train_d, valid_d, test_d = corpus.split_dataset(load.dialogs, seed)
    seqs = lambda ds: [corpus.extract_sequence(d, load.vocab) for d in ds]
    return seqs(train_d), seqs(valid_d), seqs(test_d)


def _cmd_prepare(args) -> int:
    load = _load_corpus(args)
    count = 0
    with open(args.out, "w", encoding="utf-8") as f:
        for dialog in load.dialogs:
            seq = corpus.extract_sequence(dialog, load.vocab)
            if seq.is_empty():
                continue
            f.write(corpus.sequence_to_json(seq, load.vocab) + "\n")
            count += 1
    print(f"wrote {count} sequences to {args.out}")
    return EXIT_OK


def _cmd_pretrain_kg(args) -> int:
    vocab = corpus.load_vocab(args.entities)
    graph = kg.load_triples(args.triples, vocab)
    config = RgcnConfig(dim=args.dim, epochs=args.epochs,
                        negatives=args.negatives, lr=args.lr, seed=args.seed)
    embeddings = rgcn.pretrain_embeddings(graph, vocab, config)
    rgcn.export_embeddings(embeddings, args.out)
    print(f"wrote {embeddings.shape[0]}x{embeddings.shape[1]} embeddings "
          f"to {args.out}")
    return EXIT_OK


def _cmd_augment(args) -> int:
    vocab = corpus.load_vocab(args.entities)
    graph = kg.load_triples(args.triples, vocab)
    count = 0
    with open(args.sequences, encoding="utf-8") as fin, \
            open(args.out, "w", encoding="utf-8") as fout:
        for line in fin:
            line = line.strip()
            if not line:
                continue
            seq = corpus.sequence_from_json(line, vocab)
            seq = kg.augment_sequence(graph, seq, args.max_hops)
            fout.write(corpus.sequence_to_json(seq, vocab, with_inserted=True)
                       + "\n")
            count += 1
    print(f"wrote {count} augmented sequences to {args.out}")
    return EXIT_OK


def _prepare_training_inputs(args, config: TrainConfig):
    load = _load_corpus(args)
    train_seqs, valid_seqs, test_seqs = _split_sequences(load, config.seed)
    graph = kg.load_triples(args.triples, load.vocab) if args.triples else None
    embeddings = None
    if getattr(args, "embeddings", None):
        embeddings = rgcn.load_embeddings(args.embeddings, config.model.dim)
    return load, train_seqs, valid_seqs, test_seqs, graph, embeddings


def _cmd_train(args) -> int:
    config = TrainConfig.from_kv(parse_kv(args.config))
    if args.seed is not None:
        config.seed = args.seed
    load, train_seqs, valid_seqs, _, graph, embeddings = \
        _prepare_training_inputs(args, config)
    ckpt = train(config, train_seqs, valid_seqs, load.vocab, graph, embeddings)
    ckpt.save(args.out)
    for record in ckpt.history:
        print(json.dumps(record, sort_keys=True))
    print(f"saved checkpoint (best epoch {ckpt.epoch}) to {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    config = ckpt.config
    load = _load_corpus(args)
    _, _, test_seqs = _split_sequences(load, config.seed)
    graph = kg.load_triples(args.triples, load.vocab) if args.triples else None
    model = ckpt.build_model(load.vocab)
    samples = build_test_samples(test_seqs, graph, config, load.vocab)
    result = evaluate(model, samples)
    report = {"variant": config.variant, "seed": config.seed,
              "metrics": result.to_dict()}
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    print(format_table({config.variant: result}))
    return EXIT_OK


ABLATION_ROWS = ("full", "no_entity", "no_item", "no_offline", "no_kgseq")


def _cmd_ablation_matrix(args) -> int:
    base_config = TrainConfig.from_kv(parse_kv(args.config))
    load, train_seqs, valid_seqs, test_seqs, graph, embeddings = \
        _prepare_training_inputs(args, base_config)
    results = {}
    for row in ABLATION_ROWS:
        config = TrainConfig.from_kv(parse_kv(args.config))
        if row != "full":
            setattr(config, row, True)
        emb = embeddings if config.uses_offline_init else None
        ckpt = train(config, train_seqs, valid_seqs, load.vocab, graph, emb)
        model = ckpt.build_model(load.vocab)
        samples = build_test_samples(test_seqs, graph, config, load.vocab)
        results[row] = evaluate(model, samples)
    report = {row: res.to_dict() for row, res in results.items()}
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    print(format_table(results))
    return EXIT_OK


def _cmd_serve(args) -> int:
    import os

    import uvicorn

    from .server import create_app

    vocab = corpus.load_vocab(args.entities)
    ckpt = Checkpoint.load(args.checkpoint)
    model = ckpt.build_model(vocab)
    version = f"{args.checkpoint}@epoch{ckpt.epoch}"
    port = args.port or int(os.environ.get("KGREC_PORT", "8023"))
    uvicorn.run(create_app(model, vocab, version), host=args.host, port=port)
    return EXIT_OK


_COMMANDS = {
    "prepare": _cmd_prepare,
    "pretrain-kg": _cmd_pretrain_kg,
    "augment": _cmd_augment,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablation-matrix": _cmd_ablation_matrix,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or EXIT_OK)
    try:
        return _COMMANDS[args.command](args)
    except (corpus.CorpusError, kg.KgError, rgcn.RgcnError, CheckpointError,
            ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, TrainError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
