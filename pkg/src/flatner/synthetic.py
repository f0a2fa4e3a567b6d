"""Generated corpora for self-tests: entities sit exactly on lexicon-word occurrences."""
from __future__ import annotations

import numpy as np

from .data import TaggedSentence, entities_to_tags
from .lattice import build_trie, match_words

ENTITY_TYPES = ("PER", "LOC", "ORG")


def synthetic_corpus(n_sentences: int = 50, n_chars: int = 30, n_words: int = 10,
                     seed: int = 0, min_len: int = 6, max_len: int = 16,
                     scheme: str = "BMES") -> tuple[list[TaggedSentence], list[str]]:
    """Random sentences over a ``n_chars`` alphabet with lexicon words planted in them.

    Each lexicon word has a fixed entity type.  Sentences are resampled until
    their lexicon matches do not overlap, so every match is one gold entity
    and nothing else is.
    """
    rng = np.random.default_rng(seed)
    alphabet = [chr(0x4E00 + i) for i in range(n_chars)]
    lexicon: list[str] = []
    while len(lexicon) < n_words:
        word = "".join(rng.choice(alphabet, size=int(rng.integers(2, 5))))
        if word not in lexicon:
            lexicon.append(word)
    types = {w: ENTITY_TYPES[i % len(ENTITY_TYPES)] for i, w in enumerate(lexicon)}
    trie = build_trie(lexicon)

    sentences: list[TaggedSentence] = []
    while len(sentences) < n_sentences:
        length = int(rng.integers(min_len, max_len + 1))
        chars = list(rng.choice(alphabet, size=length))
        for _ in range(int(rng.integers(1, 3))):
            word = lexicon[int(rng.integers(len(lexicon)))]
            if len(word) > length:
                continue
            at = int(rng.integers(0, length - len(word) + 1))
            chars[at:at + len(word)] = list(word)
        matches = match_words(chars, trie)
        if any(b.head <= a.tail for a, b in zip(matches, matches[1:])):
            continue
        entities = [(types[trie.words[m.word_id]], m.head, m.tail) for m in matches]
        sentences.append(TaggedSentence(chars, entities_to_tags(entities, length, scheme), scheme))
    return sentences, lexicon
