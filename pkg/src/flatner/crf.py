"""Linear-chain CRF output layer.

Scores of a tag path ``y`` over ``n`` positions::

    start[y0] + sum_t emit[t, y_t] + sum_t trans[y_{t-1}, y_t] + end[y_{n-1}]

The differentiable functions take emissions shaped ``(B, N, T)`` (or ``(N, T)``
for one sentence) plus per-sentence lengths.
"""
from __future__ import annotations

import numpy as np

from . import numerics as nx


class CRF:
    def __init__(self, d_model: int, n_tags: int, rng: np.random.Generator, dropout: float = 0.3):
        self.n_tags = n_tags
        self.dropout = dropout
        self.proj = nx.Parameter("crf.proj", nx.glorot_uniform(rng, (d_model, n_tags)), "glorot")
        self.bias = nx.Parameter("crf.bias", np.zeros(n_tags), "zeros")
        self.transitions = nx.Parameter("crf.transitions", np.zeros((n_tags, n_tags)), "zeros")
        self.start = nx.Parameter("crf.start", np.zeros(n_tags), "zeros")
        self.end = nx.Parameter("crf.end", np.zeros(n_tags), "zeros")

    @property
    def params(self) -> dict[str, nx.Parameter]:
        return {p.name: p for p in (self.proj, self.bias, self.transitions, self.start, self.end)}

    def emissions(self, reps: nx.Tensor, training: bool = False,
                  rng: np.random.Generator | None = None) -> nx.Tensor:
        return nx.linear(nx.dropout(reps, self.dropout, rng, training), self.proj, self.bias)

    def nll(self, emissions: nx.Tensor, tags: np.ndarray, lengths: np.ndarray | None = None) -> nx.Tensor:
        return nll(emissions, tags, self.transitions, self.start, self.end, lengths)

    def decode(self, emissions: np.ndarray, length: int | None = None) -> tuple[list[int], float]:
        n = emissions.shape[0] if length is None else length
        return viterbi(emissions[:n], self.transitions.data, self.start.data, self.end.data)


def _batched(emissions, lengths):
    emissions = nx.as_tensor(emissions)
    single = emissions.ndim == 2
    if single:
        emissions = nx.reshape(emissions, (1,) + emissions.shape)
    B, N, _ = emissions.shape
    if lengths is None:
        lengths = np.full(B, N, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if (lengths < 1).any() or (lengths > N).any():
        raise ValueError(f"sequence lengths must be in [1, {N}], got {lengths.tolist()}")
    return emissions, lengths, single


def log_partition(emissions, transitions, start, end, lengths=None) -> nx.Tensor:
    """Log of the summed exponentiated scores of all tag paths, by the forward recursion."""
    emissions, lengths, single = _batched(emissions, lengths)
    transitions, start, end = map(nx.as_tensor, (transitions, start, end))
    B, N, T = emissions.shape
    alpha = nx.add(start, emissions[:, 0])
    for t in range(1, N):
        step = nx.add(nx.reshape(alpha, (B, T, 1)), transitions)
        step = nx.add(step, nx.reshape(emissions[:, t], (B, 1, T)))
        new = nx.logsumexp(step, axis=1)
        alpha = nx.where((t < lengths)[:, None], new, alpha)
    out = nx.logsumexp(nx.add(alpha, end), axis=-1)
    return nx.reshape(out, ()) if single else out


def path_score(emissions, tags, transitions, start, end, lengths=None) -> nx.Tensor:
    """Score of the given tag paths; linear in every parameter."""
    emissions, lengths, single = _batched(emissions, lengths)
    transitions, start, end = map(nx.as_tensor, (transitions, start, end))
    B, N, T = emissions.shape
    tags = np.asarray(tags, dtype=np.int64).reshape(B, -1)
    if tags.shape[1] < N:
        tags = np.pad(tags, ((0, 0), (0, N - tags.shape[1])))
    live = np.arange(N)[None, :] < lengths[:, None]
    if (tags[live] < 0).any() or (tags[live] >= T).any():
        raise ValueError(f"tag ids must be in [0, {T})")
    tags = np.where(live, tags, 0)
    onehot = np.eye(T)[tags] * live[..., None]
    counts = np.zeros((B, T, T))
    b_idx, t_idx = np.nonzero(live[:, 1:])
    np.add.at(counts, (b_idx, tags[b_idx, t_idx], tags[b_idx, t_idx + 1]), 1.0)
    first = np.eye(T)[tags[:, 0]]
    last = np.eye(T)[tags[np.arange(B), lengths - 1]]
    score = nx.tsum(nx.mul(emissions, onehot), axis=(1, 2))
    score = nx.add(score, nx.tsum(nx.mul(transitions, counts), axis=(1, 2)))
    score = nx.add(score, nx.tsum(nx.mul(start, first), axis=-1))
    score = nx.add(score, nx.tsum(nx.mul(end, last), axis=-1))
    return nx.reshape(score, ()) if single else score


def nll(emissions, tags, transitions, start, end, lengths=None) -> nx.Tensor:
    """Negative log-likelihood per sentence (a scalar for a single sentence)."""
    return nx.add(log_partition(emissions, transitions, start, end, lengths),
                  nx.neg(path_score(emissions, tags, transitions, start, end, lengths)))


def viterbi(emissions, transitions, start, end) -> tuple[list[int], float]:
    """Best tag path for one sentence and its score.

    Ties go to the lowest tag index, resolved from the last position backwards.
    """
    emissions = np.asarray(emissions, dtype=np.float64)
    transitions = np.asarray(transitions, dtype=np.float64)
    n, T = emissions.shape
    delta = start + emissions[0]
    back = np.zeros((n, T), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, None] + transitions
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(T)] + emissions[t]
    final = delta + end
    best = int(np.argmax(final))
    path = [best]
    for t in range(n - 1, 0, -1):
        best = int(back[t, best])
        path.append(best)
    path.reverse()
    return path, float(final[path[-1]])


def score_path(emissions, path, transitions, start, end) -> float:
    """Plain-python path score; used to cross-check decoders."""
    s = start[path[0]] + end[path[-1]]
    for t, tag in enumerate(path):
        s += emissions[t][tag]
        if t:
            s += transitions[path[t - 1]][tag]
    return float(s)
