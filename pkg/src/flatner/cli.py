"""Command-line entry point: train, eval, predict, bench, lattice.

Settings come from, in increasing priority: built-in defaults, a ``--config``
file of ``key = value`` lines, ``FLATNER_<KEY>`` environment variables, and
command-line flags.  Keys are the field names of ``ModelConfig`` and
``TrainConfig`` (``d_model``, ``lr``, ...) plus the path options of each
subcommand.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from .bench import bench
from .data import load_embeddings, read_corpus
from .encoder import ModelConfig
from .lattice import build_lattice, load_lexicon, read_lexicon
from .tagger import FlatTagger
from .training import TrainConfig, evaluate, train

ENV_PREFIX = "FLATNER_"


class UsageError(Exception):
    pass


def read_config(path: str | Path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(value, default):
    if not isinstance(value, str):
        return value
    if isinstance(default, bool):
        low = value.lower()
        if low not in ("1", "0", "true", "false", "yes", "no"):
            raise UsageError(f"expected a boolean, got {value!r}")
        return low in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _build(cls, settings: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in settings:
            try:
                kwargs[f.name] = _coerce(settings[f.name], f.default)
            except ValueError as exc:
                raise UsageError(f"{f.name}: {exc}") from None
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


_TUNABLE = [f for cls in (ModelConfig, TrainConfig) for f in dataclasses.fields(cls)]


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flatner", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="key = value settings file")
        return p

    p = add("train", "train a tagger and write a checkpoint")
    p.add_argument("--train", help="training corpus (char tag columns)")
    p.add_argument("--dev", help="development corpus for model selection")
    p.add_argument("--lexicon", help="lexicon file, one word per line")
    p.add_argument("--char-emb", help="word2vec text file with character vectors")
    p.add_argument("--word-emb", help="word2vec text file with word vectors")
    p.add_argument("--scheme", help="tag scheme: BMES (default) or BIO")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--history", help="metrics history (JSON lines); default <out>.history.jsonl")
    for f in _TUNABLE:
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, metavar=type(f.default).__name__.upper())

    p = add("eval", "score a checkpoint on a corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--batch-size", dest="batch_size")

    p = add("predict", "tag raw sentences, one per line")
    p.add_argument("--checkpoint")
    p.add_argument("--input", help="default: stdin")
    p.add_argument("--output", help="default: stdout")
    p.add_argument("--batch-size", dest="batch_size")

    p = add("bench", "measure inference throughput")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus", help="corpus whose sentences are tagged")
    p.add_argument("--input", help="raw sentences, one per line (instead of --corpus)")
    p.add_argument("--batch-sizes", dest="batch_sizes", help="comma separated, default 1,16")
    p.add_argument("--trials")
    p.add_argument("--warmup")
    p.add_argument("--workers")
    p.add_argument("--output", help="write the JSON report here as well")

    p = add("lattice", "print the flat lattice of sentences")
    p.add_argument("--lexicon")
    p.add_argument("--sentence", action="append", help="may repeat; default: read lines from --input/stdin")
    p.add_argument("--input")
    return parser


def _settings(args: argparse.Namespace) -> dict:
    settings: dict = {}
    if args.config:
        settings.update(read_config(_existing(args.config)))
    for key, value in os.environ.items():
        if key.startswith(ENV_PREFIX):
            settings[key[len(ENV_PREFIX):].lower()] = value
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config", "verbose"):
            settings[key] = value
    return settings


def _existing(path: str) -> str:
    if not Path(path).is_file():
        raise UsageError(f"file not found: {path}")
    return path


def _need(settings: dict, key: str) -> str:
    if not settings.get(key):
        raise UsageError(f"missing required setting '{key}' (flag --{key.replace('_', '-')})")
    return settings[key]


def _read_lines(path: str | None) -> list[str]:
    if path:
        with open(_existing(path), encoding="utf-8") as fh:
            return fh.read().splitlines()
    return sys.stdin.read().splitlines()


def _chars(line: str) -> list[str]:
    return [c for c in line if not c.isspace()]


def cmd_train(s: dict) -> int:
    scheme = s.get("scheme", "BMES")
    train_set = read_corpus(_existing(_need(s, "train")), scheme)
    dev_set = read_corpus(_existing(s["dev"]), scheme) if s.get("dev") else None
    lexicon = read_lexicon(_existing(_need(s, "lexicon")))
    out = _need(s, "out")
    model_cfg = _build(ModelConfig, s)
    train_cfg = _build(TrainConfig, s)
    char_vec = load_embeddings(_existing(s["char_emb"])) if s.get("char_emb") else None
    word_vec = load_embeddings(_existing(s["word_emb"])) if s.get("word_emb") else None
    tagger = FlatTagger.from_corpus(model_cfg, train_set, lexicon, train_cfg.seed, char_vec, word_vec)
    history = s.get("history") or f"{out}.history.jsonl"
    result = train(tagger, train_set, train_cfg, dev_set, checkpoint=out, history_path=history)
    print(json.dumps({"best_epoch": result.best_epoch,
                      "best_dev_f1": result.best_dev_f1 if dev_set else None,
                      "checkpoint": out, "history": history}))
    return 0


def cmd_eval(s: dict) -> int:
    tagger = FlatTagger.load(_existing(_need(s, "checkpoint")))
    corpus = read_corpus(_existing(_need(s, "corpus")), tagger.scheme)
    scores = evaluate(tagger, corpus, int(s.get("batch_size", 16)))
    for key in ("precision", "recall", "f1", "span_f", "type_acc"):
        print(f"{key}: {getattr(scores, key)!r}")
    return 0


def cmd_predict(s: dict) -> int:
    tagger = FlatTagger.load(_existing(_need(s, "checkpoint")))
    sentences = [_chars(line) for line in _read_lines(s.get("input"))]
    tags = tagger.predict(sentences, int(s.get("batch_size", 16)))
    out = open(s["output"], "w", encoding="utf-8") if s.get("output") else sys.stdout
    try:
        for chars, seq in zip(sentences, tags):
            out.write("".join(f"{c}\t{t}\n" for c, t in zip(chars, seq)) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_bench(s: dict) -> int:
    tagger = FlatTagger.load(_existing(_need(s, "checkpoint")))
    if s.get("corpus"):
        sentences = [x.chars for x in read_corpus(_existing(s["corpus"]), tagger.scheme)]
    else:
        sentences = [_chars(line) for line in _read_lines(_need(s, "input"))]
    sizes = [int(x) for x in str(s.get("batch_sizes", "1,16")).split(",") if x.strip()]
    report = bench(tagger, sentences, sizes, int(s.get("trials", 5)), int(s.get("warmup", 1)),
                   int(s.get("workers", 1)))
    text = json.dumps(report)
    if s.get("output"):
        Path(s["output"]).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_lattice(s: dict) -> int:
    trie = load_lexicon(_existing(_need(s, "lexicon")))
    lines = s.get("sentence") or _read_lines(s.get("input"))
    blocks = [build_lattice(_chars(line), trie).dump() for line in lines]
    sys.stdout.write("\n".join(blocks))
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "bench": cmd_bench, "lattice": cmd_lattice}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](_settings(args))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"flatner {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"flatner {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
