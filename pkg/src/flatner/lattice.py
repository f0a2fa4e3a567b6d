"""Lexicon trie, character-word lattice, and its flat span form."""
from __future__ import annotations

import enum
import graphlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

logger = logging.getLogger(__name__)


class LatticeError(ValueError):
    """A span or match that does not fit the sentence it claims to belong to."""


class LexiconError(ValueError):
    pass


class SpanKind(enum.Enum):
    CHAR = "char"
    WORD = "word"


@dataclass(frozen=True)
class Span:
    token: str
    kind: SpanKind
    head: int
    tail: int
    token_id: int = -1

    @property
    def is_char(self) -> bool:
        return self.kind is SpanKind.CHAR


class Match(NamedTuple):
    word_id: int
    head: int
    tail: int


@dataclass
class FlatLattice:
    chars: tuple[str, ...]
    spans: list[Span]

    @property
    def n_chars(self) -> int:
        return len(self.chars)

    @property
    def words(self) -> list[Span]:
        return self.spans[self.n_chars:]

    @property
    def heads(self) -> list[int]:
        return [s.head for s in self.spans]

    @property
    def tails(self) -> list[int]:
        return [s.tail for s in self.spans]

    def __len__(self) -> int:
        return len(self.spans)

    def dump(self) -> str:
        return "".join(f"{s.token}\t{s.head}\t{s.tail}\n" for s in self.spans)


class _Node:
    __slots__ = ("children", "word_id")

    def __init__(self):
        self.children: dict[str, _Node] = {}
        self.word_id = -1


class Trie:
    """Prefix tree over lexicon words.  Immutable once built by :func:`build_trie`."""

    def __init__(self):
        self._root = _Node()
        self.words: list[str] = []
        self.max_len = 0
        self.duplicates = 0

    def _insert(self, word: str) -> None:
        node = self._root
        for ch in word:
            node = node.children.setdefault(ch, _Node())
        if node.word_id >= 0:
            self.duplicates += 1
            return
        node.word_id = len(self.words)
        self.words.append(word)
        self.max_len = max(self.max_len, len(word))

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return self.lookup(word) >= 0

    def lookup(self, word: str) -> int:
        """Word id of ``word``, or -1 when it is not a lexicon word."""
        node = self._root
        for ch in word:
            node = node.children.get(ch)
            if node is None:
                return -1
        return node.word_id

    def walk(self, chars: Sequence[str], start: int):
        """Yield ``(word_id, end)`` for every lexicon word beginning at ``start``."""
        node = self._root
        for end in range(start, len(chars)):
            node = node.children.get(chars[end])
            if node is None:
                return
            if node.word_id >= 0:
                yield node.word_id, end


def build_trie(words: Iterable[str]) -> Trie:
    """Build a trie from ``words``; single-character entries are dropped."""
    trie = Trie()
    short = 0
    for lineno, word in enumerate(words, 1):
        if not word:
            raise LexiconError(f"lexicon entry {lineno}: empty word")
        if len(word) < 2:
            short += 1
            continue
        trie._insert(word)
    if trie.duplicates or short:
        logger.info("lexicon: %d words, %d duplicates dropped, %d single-char entries dropped",
                    len(trie), trie.duplicates, short)
    return trie


def read_lexicon(path: str | Path) -> list[str]:
    """Read a lexicon file: one word per line, optional frequency column ignored."""
    words = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts:
                words.append(parts[0])
    return words


def load_lexicon(path: str | Path) -> Trie:
    return build_trie(read_lexicon(path))


def match_words(chars: Sequence[str], trie: Trie) -> list[Match]:
    """All lexicon words occurring in ``chars``, sorted by (head, tail)."""
    out = []
    for start in range(len(chars)):
        for word_id, end in trie.walk(chars, start):
            out.append(Match(word_id, start, end))
    return out


def flatten(chars: Sequence[str], matches: Iterable[Match]) -> FlatLattice:
    chars = tuple(chars)
    n = len(chars)
    spans = [Span(ch, SpanKind.CHAR, i, i) for i, ch in enumerate(chars)]
    words = set()
    for m in matches:
        if not 0 <= m.head < m.tail < n:
            raise LatticeError(f"match {tuple(m)} does not fit a sentence of {n} characters")
        words.add((m.head, m.tail, m.word_id))
    for head, tail, word_id in sorted(words):
        spans.append(Span("".join(chars[head:tail + 1]), SpanKind.WORD, head, tail, word_id))
    return FlatLattice(chars, spans)


def build_lattice(chars: Sequence[str], trie: Trie) -> FlatLattice:
    return flatten(chars, match_words(chars, trie))


def self_matched(flat: FlatLattice, char_index: int) -> list[int]:
    """Indices into ``flat.spans`` of the words covering character ``char_index``."""
    if not 0 <= char_index < flat.n_chars:
        raise IndexError(f"character index {char_index} out of range for {flat.n_chars} characters")
    return [k for k in range(flat.n_chars, len(flat.spans))
            if flat.spans[k].head <= char_index <= flat.spans[k].tail]


@dataclass
class LatticeGraph:
    """Character chain plus word skip-paths.

    Node ``i < n`` is character ``i``; each word node is linked from the node of
    its first character and into the node of its last character.
    """

    labels: list[str]
    n_chars: int
    anchors: list[tuple[int, int]] = field(default_factory=list)
    edges: list[tuple[int, int]] = field(default_factory=list)

    def characters(self) -> list[str]:
        nxt = {a: b for a, b in self.edges if a < self.n_chars and b < self.n_chars}
        incoming = set(nxt.values())
        node = next((i for i in range(self.n_chars) if i not in incoming), None)
        chain = []
        while node is not None:
            chain.append(self.labels[node])
            node = nxt.get(node)
        return chain

    def skip_paths(self) -> list[tuple[str, int, int]]:
        return [(self.labels[self.n_chars + k], head, tail) for k, (head, tail) in enumerate(self.anchors)]

    def is_acyclic(self) -> bool:
        graph: dict[int, set[int]] = {i: set() for i in range(len(self.labels))}
        for a, b in self.edges:
            graph[b].add(a)
        try:
            tuple(graphlib.TopologicalSorter(graph).static_order())
        except graphlib.CycleError:
            return False
        return True


def recover(flat: FlatLattice) -> LatticeGraph:
    """Rebuild the lattice: chain the head==tail spans, then add word skip-paths."""
    chars = [s for s in flat.spans if s.head == s.tail and s.is_char]
    chars.sort(key=lambda s: s.head)
    if [s.head for s in chars] != list(range(len(chars))):
        raise LatticeError("character spans do not form a contiguous chain")
    n = len(chars)
    graph = LatticeGraph([s.token for s in chars], n)
    graph.edges.extend((i, i + 1) for i in range(n - 1))
    for s in flat.spans:
        if s.is_char:
            continue
        if not 0 <= s.head < s.tail < n:
            raise LatticeError(f"word span {s.token!r} ({s.head}, {s.tail}) has no anchor characters")
        node = len(graph.labels)
        graph.labels.append(s.token)
        graph.anchors.append((s.head, s.tail))
        graph.edges.append((s.head, node))
        graph.edges.append((node, s.tail))
    return graph
