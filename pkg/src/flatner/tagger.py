"""End-to-end tagger: lexicon matching, encoder, CRF, checkpointing."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .crf import CRF
from .data import Embeddings, TaggedSentence, Vocab, tag_vocab
from .encoder import Batch, FlatEncoder, ModelConfig, make_batch
from .lattice import FlatLattice, Trie, build_lattice, build_trie


class FlatTagger:
    def __init__(self, config: ModelConfig, chars: Vocab, words: Vocab, tags: Vocab, trie: Trie,
                 seed: int = 0, scheme: str = "BMES"):
        self.config = config
        self.chars, self.words, self.tags = chars, words, tags
        self.trie = trie
        self.scheme = scheme
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.encoder = FlatEncoder(config, len(chars), len(words), rng)
        self.crf = CRF(config.d_model, len(tags), rng, dropout=config.output_dropout)

    @classmethod
    def from_corpus(cls, config: ModelConfig, sentences: Sequence[TaggedSentence], lexicon: Sequence[str],
                    seed: int = 0, char_vectors: Embeddings | None = None,
                    word_vectors: Embeddings | None = None) -> FlatTagger:
        trie = build_trie(lexicon)
        chars = Vocab(c for s in sentences for c in s.chars)
        words = Vocab(trie.words)
        scheme = sentences[0].scheme if sentences else "BMES"
        if char_vectors is not None:
            config.char_dim = char_vectors.dim
        if word_vectors is not None:
            config.word_dim = word_vectors.dim
        tagger = cls(config, chars, words, tag_vocab(sentences), trie, seed, scheme)
        rng = np.random.default_rng([seed, 1])
        if char_vectors is not None:
            tagger.encoder.char_table.data[...] = char_vectors.matrix(chars, rng)
        if word_vectors is not None:
            tagger.encoder.word_table.data[...] = word_vectors.matrix(words, rng)
        return tagger

    @property
    def params(self) -> dict[str, nx.Parameter]:
        return {**self.encoder.params, **self.crf.params}

    # -- data ---------------------------------------------------------------

    def lattice(self, chars: Sequence[str]) -> FlatLattice:
        return build_lattice(chars, self.trie)

    def batch(self, sentences: Sequence[Sequence[str]]) -> Batch:
        return make_batch([self.lattice(s) for s in sentences], self.chars, self.words)

    def tag_ids(self, sentences: Sequence[TaggedSentence]) -> np.ndarray:
        N = max(len(s) for s in sentences)
        out = np.zeros((len(sentences), N), dtype=np.int64)
        for b, s in enumerate(sentences):
            out[b, : len(s)] = [self.tags.index(t) for t in s.tags]
        return out

    # -- model --------------------------------------------------------------

    def emissions(self, batch: Batch, training: bool = False, rng: np.random.Generator | None = None) -> nx.Tensor:
        return self.crf.emissions(self.encoder.encode(batch, training, rng), training, rng)

    def loss(self, sentences: Sequence[TaggedSentence], training: bool = False,
             rng: np.random.Generator | None = None) -> nx.Tensor:
        """Summed sentence NLL over the batch."""
        batch = self.batch([s.chars for s in sentences])
        em = self.emissions(batch, training, rng)
        return nx.tsum(self.crf.nll(em, self.tag_ids(sentences), batch.n_chars))

    def predict_ids(self, sentences: Sequence[Sequence[str]], batch_size: int = 16) -> list[list[int]]:
        out: list[list[int]] = []
        with nx.no_grad():
            for i in range(0, len(sentences), batch_size):
                chunk = [s for s in sentences[i:i + batch_size]]
                nonempty = [s for s in chunk if len(s)]
                decoded = iter(())
                if nonempty:
                    batch = self.batch(nonempty)
                    em = self.emissions(batch).data
                    decoded = iter([self.crf.decode(em[b], int(n))[0] for b, n in enumerate(batch.n_chars)])
                out.extend(next(decoded) if len(s) else [] for s in chunk)
        return out

    def predict(self, sentences: Sequence[Sequence[str]], batch_size: int = 16) -> list[list[str]]:
        return [[self.tags.token(i) for i in path] for path in self.predict_ids(sentences, batch_size)]

    # -- persistence ----------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.params
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise nx.ShapeError(f"{name}: checkpoint shape {state[name].shape} != model shape {p.shape}")
            p.data[...] = state[name]

    def quantized_state(self) -> dict[str, np.ndarray]:
        """Parameters rounded through float32, exactly as a checkpoint stores them."""
        return {k: v.astype(np.float32).astype(np.float64) for k, v in self.state_dict().items()}

    def meta(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "chars": self.chars.tokens,
            "words": self.words.tokens,
            "tags": self.tags.tokens,
            "lexicon": self.trie.words,
            "scheme": self.scheme,
            "seed": self.seed,
        }

    def save(self, path: str | Path, extra: dict | None = None,
             state: dict[str, np.ndarray] | None = None) -> None:
        meta = self.meta()
        if extra:
            meta["extra"] = extra
        nx.save_checkpoint(path, state if state is not None else self.state_dict(), meta)

    @classmethod
    def load(cls, path: str | Path) -> FlatTagger:
        arrays, meta = nx.load_checkpoint(path)
        config = ModelConfig(**meta["config"])
        tagger = cls(config, Vocab(meta["chars"], specials=()), Vocab(meta["words"], specials=()),
                     Vocab(meta["tags"], specials=()), build_trie(meta["lexicon"]),
                     meta.get("seed", 0), meta.get("scheme", "BMES"))
        tagger.load_state_dict({k: v.astype(np.float64) for k, v in arrays.items()})
        tagger.extra = meta.get("extra", {})
        return tagger

    def checksum(self) -> str:
        return nx.checksum(p.data for p in self.params.values())
