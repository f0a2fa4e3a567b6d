"""Corpus, vocabulary, embedding, and tag-scheme handling."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
OUTSIDE = "O"
SCHEMES = {"BIO": ("B", "I"), "BMES": ("B", "M", "E", "S")}


class CorpusError(ValueError):
    pass


class EmbeddingError(ValueError):
    pass


@dataclass
class TaggedSentence:
    chars: list[str]
    tags: list[str]
    scheme: str = "BMES"

    def __post_init__(self):
        if len(self.chars) != len(self.tags):
            raise CorpusError(f"{len(self.chars)} characters but {len(self.tags)} tags")

    def __len__(self) -> int:
        return len(self.chars)


class Vocab:
    """Bijective token <-> id map.  Unknown tokens map to ``<unk>`` when it exists."""

    def __init__(self, tokens: Iterable[str] = (), specials: Sequence[str] = (PAD, UNK)):
        self._itos: list[str] = []
        self._stoi: dict[str, int] = {}
        for tok in specials:
            self.add(tok)
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self._stoi.get(token)
        if idx is None:
            idx = self._stoi[token] = len(self._itos)
            self._itos.append(token)
        return idx

    def index(self, token: str) -> int:
        idx = self._stoi.get(token)
        if idx is not None:
            return idx
        if UNK in self._stoi:
            return self._stoi[UNK]
        raise KeyError(token)

    def token(self, idx: int) -> str:
        return self._itos[idx]

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def __len__(self) -> int:
        return len(self._itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._itos == other._itos


def tag_vocab(sentences: Iterable[TaggedSentence]) -> Vocab:
    """Tag vocabulary with ``O`` at id 0, then tags in first-seen order."""
    vocab = Vocab(specials=(OUTSIDE,))
    for s in sentences:
        for t in s.tags:
            vocab.add(t)
    return vocab


def check_tag(tag: str, scheme: str) -> None:
    if tag == OUTSIDE:
        return
    prefix, sep, kind = tag.partition("-")
    if not sep or not kind or prefix not in SCHEMES[scheme]:
        raise CorpusError(f"tag {tag!r} is not valid under the {scheme} scheme")


def read_corpus(path: str | Path, scheme: str = "BMES") -> list[TaggedSentence]:
    """Read a CoNLL-style two-column file (``char tag``), blank lines between sentences."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown tag scheme {scheme!r}")
    sentences: list[TaggedSentence] = []
    chars: list[str] = []
    tags: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                if chars:
                    sentences.append(TaggedSentence(chars, tags, scheme))
                    chars, tags = [], []
                continue
            parts = line.split()
            if len(parts) != 2:
                raise CorpusError(f"{path}:{lineno}: expected 'char tag', got {line!r}")
            try:
                check_tag(parts[1], scheme)
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            chars.append(parts[0])
            tags.append(parts[1])
    if chars:
        sentences.append(TaggedSentence(chars, tags, scheme))
    return sentences


def write_corpus(path: str | Path, sentences: Iterable[TaggedSentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            for ch, tag in zip(s.chars, s.tags):
                fh.write(f"{ch} {tag}\n")
            fh.write("\n")


# ---------------------------------------------------------------------------
# tag schemes


def tags_to_entities(tags: Sequence[str], scheme: str = "BMES") -> list[tuple[str, int, int]]:
    """Decode entity spans ``(type, start, end)`` with inclusive ``end``.

    Decoding is lenient: a continuation tag that cannot extend the open entity
    starts a new one.
    """
    entities = []
    open_type: str | None = None
    start = 0

    def close(end: int):
        nonlocal open_type
        if open_type is not None:
            entities.append((open_type, start, end))
            open_type = None

    for i, tag in enumerate(tags):
        if tag == OUTSIDE:
            close(i - 1)
            continue
        prefix, _, kind = tag.partition("-")
        if scheme == "BIO":
            if prefix == "I" and open_type == kind:
                continue
            close(i - 1)
            open_type, start = kind, i
        else:
            if prefix in ("M", "E") and open_type == kind:
                if prefix == "E":
                    close(i)
                continue
            close(i - 1)
            open_type, start = kind, i
            if prefix in ("S", "E"):
                close(i)
    close(len(tags) - 1)
    return entities


def entities_to_tags(entities: Iterable[tuple[str, int, int]], length: int,
                     scheme: str = "BMES") -> list[str]:
    tags = [OUTSIDE] * length
    for kind, start, end in entities:
        if any(t != OUTSIDE for t in tags[start:end + 1]):
            raise ValueError(f"entity ({kind}, {start}, {end}) overlaps another entity")
        if scheme == "BIO":
            tags[start] = f"B-{kind}"
            for i in range(start + 1, end + 1):
                tags[i] = f"I-{kind}"
        elif start == end:
            tags[start] = f"S-{kind}"
        else:
            tags[start] = f"B-{kind}"
            for i in range(start + 1, end):
                tags[i] = f"M-{kind}"
            tags[end] = f"E-{kind}"
    return tags


# ---------------------------------------------------------------------------
# embeddings


@dataclass
class Embeddings:
    vectors: dict[str, np.ndarray]
    dim: int
    dropped: int = 0
    duplicates: int = 0

    def matrix(self, vocab: Vocab, rng: np.random.Generator) -> np.ndarray:
        """Rows in vocab order; tokens missing from the file get N(0, dim^-1/2) rows."""
        out = rng.normal(0.0, self.dim ** -0.5, size=(len(vocab), self.dim))
        for i, tok in enumerate(vocab.tokens):
            vec = self.vectors.get(tok)
            if vec is not None:
                out[i] = vec
        if PAD in vocab:
            out[vocab.index(PAD)] = 0.0
        return out


def load_embeddings(path: str | Path, vocab: Vocab | None = None) -> Embeddings:
    """Load word2vec text format: a ``count dim`` header, then ``token v1 ... v_dim`` rows."""
    vectors: dict[str, np.ndarray] = {}
    dropped = duplicates = 0
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingError(f"{path}:1: expected 'count dim' header")
        count, dim = int(header[0]), int(header[1])
        rows = 0
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\r\n").split(" ")
            if not line.strip():
                continue
            rows += 1
            token, values = parts[0], [p for p in parts[1:] if p]
            if len(values) != dim:
                raise EmbeddingError(f"{path}:{lineno}: {len(values)} values, header says {dim}")
            if vocab is not None and token not in vocab:
                dropped += 1
                continue
            if token in vectors:
                duplicates += 1
                logger.warning("%s:%d: duplicate token %r, keeping the last vector", path, lineno, token)
            vectors[token] = np.array(values, dtype=np.float64)
    if rows != count:
        logger.warning("%s: header announces %d rows, found %d", path, count, rows)
    if dropped:
        logger.info("%s: %d tokens not in vocabulary dropped", path, dropped)
    return Embeddings(vectors, dim, dropped, duplicates)
