"""The flat-lattice transformer encoder.

Spans are embedded (separate char/word tables and projections), attend to each
other with relative head/tail position encodings, and only the character rows
are returned for tagging.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import numerics as nx
from .data import PAD, Vocab
from .lattice import FlatLattice, self_matched
from .position import SinusoidTable, fused_encoding, pairwise_distances

MASKS = ("none", "msm", "mld")
MLD_DISTANCES = ("hh", "tt", "min")


@dataclass
class ModelConfig:
    d_model: int = 160
    n_heads: int = 8
    ffn_size: int = 480
    n_layers: int = 1
    embed_dropout: float = 0.5
    output_dropout: float = 0.3
    scale_attention: bool = True
    mask: str = "none"
    mld_threshold: int = 10
    mld_distance: str = "hh"
    char_dim: int = 0  # 0 means d_model
    word_dim: int = 0

    def __post_init__(self):
        if self.d_model % 2:
            raise ValueError(f"d_model must be even for sinusoid encodings, got {self.d_model}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.mask not in MASKS:
            raise ValueError(f"mask must be one of {MASKS}, got {self.mask!r}")
        if self.mld_distance not in MLD_DISTANCES:
            raise ValueError(f"mld_distance must be one of {MLD_DISTANCES}, got {self.mld_distance!r}")
        self.char_dim = self.char_dim or self.d_model
        self.word_dim = self.word_dim or self.d_model

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Batch:
    """Padded span arrays for a list of lattices, all shaped ``(B, S)``."""

    lattices: list[FlatLattice]
    char_ids: np.ndarray
    word_ids: np.ndarray
    is_char: np.ndarray
    valid: np.ndarray
    heads: np.ndarray
    tails: np.ndarray
    n_chars: np.ndarray

    def __len__(self) -> int:
        return len(self.lattices)

    @property
    def max_chars(self) -> int:
        return int(self.n_chars.max())


def make_batch(lattices: Sequence[FlatLattice], chars: Vocab, words: Vocab) -> Batch:
    B = len(lattices)
    S = max(len(f) for f in lattices)
    shape = (B, S)
    char_ids = np.full(shape, chars.index(PAD), dtype=np.int64)
    word_ids = np.full(shape, words.index(PAD), dtype=np.int64)
    is_char = np.zeros(shape, dtype=bool)
    valid = np.zeros(shape, dtype=bool)
    heads = np.zeros(shape, dtype=np.int64)
    tails = np.zeros(shape, dtype=np.int64)
    for b, flat in enumerate(lattices):
        n, s = flat.n_chars, len(flat)
        char_ids[b, :n] = [chars.index(c) for c in flat.chars]
        word_ids[b, n:s] = [words.index(w.token) for w in flat.words]
        is_char[b, :n] = True
        valid[b, :s] = True
        heads[b, :s] = flat.heads
        tails[b, :s] = flat.tails
    n_chars = np.array([f.n_chars for f in lattices], dtype=np.int64)
    return Batch(list(lattices), char_ids, word_ids, is_char, valid, heads, tails, n_chars)


def attention_mask(batch: Batch, config: ModelConfig) -> np.ndarray:
    """Boolean ``(B, 1, S, S)`` array: True where query ``i`` may attend to key ``j``."""
    keep = batch.valid[:, None, :].repeat(batch.valid.shape[1], axis=1)
    if config.mask == "msm":
        # character -> word that contains it
        covered = ((batch.heads[:, None, :] <= np.arange(keep.shape[1])[None, :, None])
                   & (np.arange(keep.shape[1])[None, :, None] <= batch.tails[:, None, :]))
        drop = batch.is_char[:, :, None] & ~batch.is_char[:, None, :] & batch.valid[:, None, :] & covered
        keep &= ~drop
    elif config.mask == "mld":
        dm = pairwise_distances(batch.heads, batch.tails)
        if config.mld_distance == "hh":
            dist = np.abs(dm.hh)
        elif config.mld_distance == "tt":
            dist = np.abs(dm.tt)
        else:
            dist = np.minimum.reduce([np.abs(dm[k]) for k in ("hh", "ht", "th", "tt")])
        keep &= dist <= config.mld_threshold
    return keep[:, None]


def msm_entries(flat: FlatLattice) -> set[tuple[int, int]]:
    """(char, word) index pairs removed by the self-matched-word mask."""
    return {(i, k) for i in range(flat.n_chars) for k in self_matched(flat, i)}


def apply_mask(scores: nx.Tensor, keep: np.ndarray) -> nx.Tensor:
    return nx.where(keep, scores, nx.NEG_INF)


class FlatEncoder:
    def __init__(self, config: ModelConfig, n_chars: int, n_words: int, rng: np.random.Generator):
        self.config = config
        c = config
        d = c.d_model
        P = nx.Parameter
        self.params: dict[str, nx.Parameter] = {}

        def register(p: nx.Parameter) -> nx.Parameter:
            self.params[p.name] = p
            return p

        self.char_table = register(P("char_embed", nx.embedding_normal(rng, (n_chars, c.char_dim)), "normal"))
        self.word_table = register(P("word_embed", nx.embedding_normal(rng, (n_words, c.word_dim)), "normal"))
        self.char_table.data[0] = 0.0
        self.word_table.data[0] = 0.0
        self.char_proj = register(P("char_proj", nx.glorot_uniform(rng, (c.char_dim, d)), "glorot"))
        self.char_bias = register(P("char_proj_bias", np.zeros(d), "zeros"))
        self.word_proj = register(P("word_proj", nx.glorot_uniform(rng, (c.word_dim, d)), "glorot"))
        self.word_bias = register(P("word_proj_bias", np.zeros(d), "zeros"))
        self.w_r = register(P("w_r", nx.glorot_uniform(rng, (d, 4 * d)), "glorot"))
        self.layers = []
        for layer in range(c.n_layers):
            pre = f"layer{layer}."
            self.layers.append({
                "w_q": register(P(pre + "w_q", nx.glorot_uniform(rng, (d, d)), "glorot")),
                "w_ke": register(P(pre + "w_ke", nx.glorot_uniform(rng, (d, d)), "glorot")),
                "w_kr": register(P(pre + "w_kr", nx.glorot_uniform(rng, (d, d)), "glorot")),
                "w_v": register(P(pre + "w_v", nx.glorot_uniform(rng, (d, d)), "glorot")),
                "w_o": register(P(pre + "w_o", nx.glorot_uniform(rng, (d, d)), "glorot")),
                "u": register(P(pre + "u", np.zeros((c.n_heads, c.d_head)), "zeros")),
                "v": register(P(pre + "v", np.zeros((c.n_heads, c.d_head)), "zeros")),
                "ln1_g": register(P(pre + "ln1_gain", np.ones(d), "ones")),
                "ln1_b": register(P(pre + "ln1_bias", np.zeros(d), "zeros")),
                "ffn_w1": register(P(pre + "ffn_w1", nx.glorot_uniform(rng, (d, c.ffn_size)), "glorot")),
                "ffn_b1": register(P(pre + "ffn_b1", np.zeros(c.ffn_size), "zeros")),
                "ffn_w2": register(P(pre + "ffn_w2", nx.glorot_uniform(rng, (c.ffn_size, d)), "glorot")),
                "ffn_b2": register(P(pre + "ffn_b2", np.zeros(d), "zeros")),
                "ln2_g": register(P(pre + "ln2_gain", np.ones(d), "ones")),
                "ln2_b": register(P(pre + "ln2_bias", np.zeros(d), "zeros")),
            })
        self.table = SinusoidTable(d, reach=64)

    # -- pieces ---------------------------------------------------------------

    def embed(self, batch: Batch, training: bool = False, rng: np.random.Generator | None = None) -> nx.Tensor:
        """Span embeddings ``(B, S, d_model)``; padding rows are zero."""
        ec = nx.linear(nx.take(self.char_table, batch.char_ids), self.char_proj, self.char_bias)
        ew = nx.linear(nx.take(self.word_table, batch.word_ids), self.word_proj, self.word_bias)
        e = nx.where(batch.is_char[..., None], ec, ew)
        e = nx.where(batch.valid[..., None], e, 0.0)
        return nx.dropout(e, self.config.embed_dropout, rng, training)

    def relative_encoding(self, batch: Batch) -> nx.Tensor:
        """Fused relative position encoding ``(B, S, S, d_model)``."""
        return fused_encoding(pairwise_distances(batch.heads, batch.tails), self.w_r, self.table)

    def attention_scores(self, e: nx.Tensor, r: nx.Tensor, layer: int = 0) -> nx.Tensor:
        """Relative attention logits ``(B, H, S, S)`` before masking.

        Content and position terms are grouped as ``(q_i + u) . k_j`` and
        ``(q_i + v) . r_ij``; the optional 1/sqrt(d_head) scaling follows.
        """
        c = self.config
        p = self.layers[layer]
        B, S, _ = e.shape
        heads = (B, S, c.n_heads, c.d_head)
        q = nx.reshape(nx.matmul(e, p["w_q"]), heads)
        k = nx.reshape(nx.matmul(e, p["w_ke"]), heads)
        kr = nx.reshape(nx.matmul(r, p["w_kr"]), (B, S, S, c.n_heads, c.d_head))
        content = nx.einsum("bihc,bjhc->bhij", nx.add(q, p["u"]), k)
        position = nx.einsum("bihc,bijhc->bhij", nx.add(q, p["v"]), kr)
        scores = nx.add(content, position)
        if c.scale_attention:
            scores = nx.scale(scores, 1.0 / math.sqrt(c.d_head))
        return scores

    def attention(self, e: nx.Tensor, r: nx.Tensor, keep: np.ndarray, layer: int = 0) -> nx.Tensor:
        """Attention weights ``(B, H, S, S)``; masked entries are exactly zero."""
        scores = apply_mask(self.attention_scores(e, r, layer), keep)
        return nx.softmax(scores, axis=-1, keep=keep)

    def layer(self, e: nx.Tensor, r: nx.Tensor, keep: np.ndarray, layer: int = 0) -> nx.Tensor:
        c = self.config
        p = self.layers[layer]
        B, S, _ = e.shape
        weights = self.attention(e, r, keep, layer)
        value = nx.reshape(nx.matmul(e, p["w_v"]), (B, S, c.n_heads, c.d_head))
        mixed = nx.reshape(nx.einsum("bhij,bjhc->bihc", weights, value), (B, S, c.d_model))
        h = nx.layer_norm(nx.add(e, nx.matmul(mixed, p["w_o"])), p["ln1_g"], p["ln1_b"])
        ff = nx.linear(nx.relu(nx.linear(h, p["ffn_w1"], p["ffn_b1"])), p["ffn_w2"], p["ffn_b2"])
        return nx.layer_norm(nx.add(h, ff), p["ln2_g"], p["ln2_b"])

    def encode(self, batch: Batch, training: bool = False, rng: np.random.Generator | None = None) -> nx.Tensor:
        """Character representations ``(B, max_chars, d_model)``.

        Rows beyond a sentence's own character count are padding.
        """
        e = self.embed(batch, training, rng)
        r = self.relative_encoding(batch)
        keep = attention_mask(batch, self.config)
        for layer in range(self.config.n_layers):
            e = self.layer(e, r, keep, layer)
        return e[:, : batch.max_chars]
