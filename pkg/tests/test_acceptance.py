"""Acceptance gate: one check per criterion, each reporting a PASS/FAIL line."""
import itertools
import time
from collections import Counter

import numpy as np
import pytest

from flatner import numerics as nx
from flatner.bench import REFERENCE_SPEEDUP, bench
from flatner.crf import log_partition, score_path, viterbi
from flatner.data import TaggedSentence
from flatner.encoder import ModelConfig, attention_mask, msm_entries
from flatner.lattice import build_lattice, build_trie, match_words, recover
from flatner.metrics import count, f1, span_f, type_acc
from flatner.position import distances, fuse
from flatner.synthetic import synthetic_corpus
from flatner.tagger import FlatTagger
from flatner.training import TrainConfig, evaluate, train

from conftest import ACCEPTANCE_LINES, batch_of, random_case, randomize, tiny_tagger
from test_encoder import SENTENCES, four_term_scores, vanilla_encode
from test_lattice import brute_force_matches
from test_position import naive_R, shifted


def report(name, failures, detail=""):
    status = "PASS" if not failures else "FAIL"
    line = f"{status}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert not failures, "; ".join(failures[:5])


def test_lattice_round_trip():
    rng = np.random.default_rng(100)
    failures = []
    t0 = time.perf_counter()
    for k in range(1000):
        sentence, words = random_case(rng)
        g = recover(build_lattice(sentence, build_trie(words)))
        if g.characters() != list(sentence):
            failures.append(f"case {k}: character chain differs")
        if Counter(g.skip_paths()) != Counter(brute_force_matches(sentence, words)):
            failures.append(f"case {k}: skip paths differ")
        if not g.is_acyclic():
            failures.append(f"case {k}: cycle")
    elapsed = time.perf_counter() - t0
    if elapsed >= 10:
        failures.append(f"took {elapsed:.1f}s")
    report("lattice round-trip, 1000 cases", failures, f"{elapsed:.2f}s")


def test_matching_oracle():
    rng = np.random.default_rng(101)
    failures = []
    for k in range(500):
        sentence, words = random_case(rng, alphabet=20, max_len=64, max_words=200)
        trie = build_trie(words)
        got = sorted((trie.words[m.word_id], m.head, m.tail) for m in match_words(sentence, trie))
        if got != brute_force_matches(sentence, words):
            failures.append(f"case {k}")
    report("lexicon matching vs substring scan, 500 cases", failures)


def test_position_encoding():
    rng = np.random.default_rng(102)
    failures = []
    worst = 0.0
    for k in range(200):
        sentence, words = random_case(rng, max_len=20, max_words=30)
        flat = build_lattice(sentence, build_trie(words))
        dm = distances(flat)
        if not (np.array_equal(dm.hh, -dm.hh.T) and np.array_equal(dm.tt, -dm.tt.T)
                and np.array_equal(dm.ht, -dm.th.T)):
            failures.append(f"lattice {k}: symmetry")
        w = rng.normal(size=(8, 32))
        R = fuse(dm, w).R
        c = int(rng.integers(1, 10_000))
        if not np.array_equal(fuse(distances(shifted(flat, c)), w).R, R):
            failures.append(f"lattice {k}: shift by {c} changed R")
        if len(flat) <= 12:
            err = np.abs(R - naive_R(flat.heads, flat.tails, w)).max()
            worst = max(worst, err)
            if err > 1e-12:
                failures.append(f"lattice {k}: memoized vs naive {err:.2e}")
    report("relative position encoding, 200 lattices", failures, f"max naive err {worst:.1e}")


def test_attention():
    rng = np.random.default_rng(103)
    failures = []
    worst = 0.0
    for scale in (True, False):
        tagger = tiny_tagger(d_model=4, n_heads=2, scale=scale)
        randomize(tagger, rng)
        enc = tagger.encoder
        for s in ("abc", "abcd", "bcde", "fab"):
            batch = batch_of(tagger, [s])
            if batch.heads.shape[1] > 8:
                continue
            e = enc.embed(batch)
            r = enc.relative_encoding(batch)
            scores = enc.attention_scores(e, r).data[0]
            for h in range(2):
                err = np.abs(scores[h] - four_term_scores(enc, e.data[0], r.data[0], h)).max()
                worst = max(worst, err)
                if err > 1e-10:
                    failures.append(f"four-term {s!r} head {h}: {err:.2e}")

    for seed in range(3):
        tagger = tiny_tagger(seed=seed)
        randomize(tagger, rng)
        for name in ("w_kr", "u", "v"):
            tagger.encoder.layers[0][name].data[...] = 0
        for s in SENTENCES:
            err = np.abs(tagger.encoder.encode(batch_of(tagger, [s])).data[0]
                         - vanilla_encode(tagger, tagger.lattice(s))).max()
            if err > 1e-10:
                failures.append(f"vanilla {s!r}: {err:.2e}")

    for mask in ("none", "msm", "mld"):
        tagger = tiny_tagger(mask=mask)
        tagger.config.mld_threshold = 1
        randomize(tagger, rng, scale=1.0)
        batch = batch_of(tagger, SENTENCES)
        enc = tagger.encoder
        keep = attention_mask(batch, tagger.config)
        w = enc.attention(enc.embed(batch), enc.relative_encoding(batch), keep).data
        keep = np.broadcast_to(keep, w.shape)
        if (w[~keep] != 0.0).any():
            failures.append(f"{mask}: masked weight nonzero")
        live = keep.any(-1)
        if np.abs(w.sum(-1)[live] - 1).max() > 1e-6:
            failures.append(f"{mask}: row sum off")
        batched = tagger.predict(SENTENCES, batch_size=len(SENTENCES))
        single = [tagger.predict([s], batch_size=1)[0] for s in SENTENCES]
        if batched != single:
            failures.append(f"{mask}: batched predictions differ")
    report("attention oracles, masks and batching", failures, f"max four-term err {worst:.1e}")


def test_gradient_check():
    rng = np.random.default_rng(104)
    tagger = tiny_tagger(d_model=8, n_heads=2, n_tags=4)
    randomize(tagger, rng)
    sent = TaggedSentence(list("abc"), ["T1", "O", "T3"])
    assert len(tagger.lattice("abc")) <= 6
    t0 = time.perf_counter()
    result = nx.grad_check(lambda: tagger.loss([sent]), tagger.params.values(), tolerance=1e-4)
    elapsed = time.perf_counter() - t0
    failures = [] if result.passed else [str(result)]
    if elapsed >= 60:
        failures.append(f"took {elapsed:.1f}s")
    report("end-to-end gradient check", failures, f"max rel err {result.max_error:.1e}, {elapsed:.2f}s")


def test_crf_exact():
    rng = np.random.default_rng(105)
    failures = []
    for k in range(200):
        n, T = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        # integer scores on half the instances so ties actually occur
        if k % 2:
            em, tr, st, en = (rng.integers(-2, 3, size=s).astype(float) for s in ((n, T), (T, T), (T,), (T,)))
        else:
            em, tr, st, en = (rng.normal(size=s) for s in ((n, T), (T, T), (T,), (T,)))
        scores = {p: score_path(em, p, tr, st, en) for p in itertools.product(range(T), repeat=n)}
        z = np.log(sum(np.exp(s) for s in scores.values()))
        if abs(log_partition(em, tr, st, en).item() - z) > 1e-8:
            failures.append(f"instance {k}: log partition")
        best = max(scores.values())
        expected = min((p for p, s in scores.items() if s == best), key=lambda p: p[::-1])
        if tuple(viterbi(em, tr, st, en)[0]) != expected:
            failures.append(f"instance {k}: viterbi")
    report("CRF partition and decoding, 200 instances", failures)


@pytest.mark.slow
def test_synthetic_overfit():
    sents, lex = synthetic_corpus(n_sentences=50, n_chars=30, n_words=10, seed=0, scheme="BMES")
    tagger = FlatTagger.from_corpus(ModelConfig(d_model=32, ffn_size=96), sents, lex, seed=0)
    t0 = time.perf_counter()
    result = train(tagger, sents, TrainConfig(max_epochs=300, seed=0, target_f1=1.0), dev_set=sents)
    elapsed = time.perf_counter() - t0
    failures = []
    final = evaluate(tagger, sents).f1
    if result.best_dev_f1 != 1.0:
        failures.append(f"best train F1 {result.best_dev_f1:.3f}")
    if elapsed >= 300:
        failures.append(f"took {elapsed:.0f}s")

    tagger.config.mask = "msm"
    batch = tagger.batch([s.chars for s in sents])
    keep = attention_mask(batch, tagger.config)
    for b, flat in enumerate(batch.lattices):
        S = len(flat)
        zeroed = {(int(i), int(j)) for i, j in zip(*np.nonzero(~keep[b, 0, :S, :S]))}
        if zeroed != msm_entries(flat):
            failures.append(f"sentence {b}: msm entries differ")
    report("synthetic overfit", failures,
           f"F1 {result.best_dev_f1:.3f} at epoch {result.best_epoch}, final {final:.3f}, {elapsed:.1f}s")


def test_metrics():
    rng = np.random.default_rng(106)
    kinds = ["PER", "LOC", "ORG"]

    def draw(n):
        out = set()
        for _ in range(n):
            s = int(rng.integers(0, 15))
            out.add((kinds[int(rng.integers(3))], s, s + int(rng.integers(0, 3))))
        return out

    failures = []
    for k in range(1000):
        g, p = draw(int(rng.integers(0, 7))), draw(int(rng.integers(0, 7)))
        if span_f(g, p) < f1(g, p)[2]:
            failures.append(f"set {k}: span_f < f1")
        c = count(g, p)
        if c.span_correct and abs(c.full_correct - c.span_correct * type_acc(g, p)) > 1e-9:
            failures.append(f"set {k}: type_acc identity")

    g = {("PER", 0, 1), ("LOC", 2, 3), ("ORG", 5, 6)}
    p = {("PER", 0, 1), ("LOC", 2, 3), ("PER", 5, 6), ("PER", 8, 9)}
    fixtures = [
        (f1(g, g), (1.0, 1.0, 1.0)),
        (f1(set(), set()), (1.0, 1.0, 1.0)),
        (f1({"A", "B"}, {"A", "C"}), (0.5, 0.5, 0.5)),
        (span_f({("PER", 0, 1)}, {("LOC", 0, 1)}), 1.0),
        (type_acc(g, p), 2 / 3),
        (type_acc({("PER", 0, 1)}, set()), 1.0),
    ]
    for k, (got, want) in enumerate(fixtures):
        if got != pytest.approx(want, abs=1e-12):
            failures.append(f"fixture {k}: {got} != {want}")
    report("metrics, 1000 random sets and fixtures", failures)


def test_bench():
    rng = np.random.default_rng(107)
    sents, lex = synthetic_corpus(n_sentences=64, seed=7)
    tagger = FlatTagger.from_corpus(ModelConfig(d_model=32, ffn_size=96), sents, lex, seed=0)
    randomize(tagger, rng, scale=0.1)
    before = tagger.checksum()
    result = bench(tagger, [s.chars for s in sents], (1, 16), trials=5, warmup=1)
    failures = []
    if tagger.checksum() != before or result["checksum"] != before:
        failures.append("parameters changed")
    sizes = [r["batch_size"] for r in result["rows"]]
    if sizes != [1, 16] or "speedup_16_vs_1" not in result:
        failures.append("report shape")
    if result["reference_speedup"] != REFERENCE_SPEEDUP:
        failures.append("reference value missing")
    rate = {r["batch_size"]: r["sentences_per_sec"] for r in result["rows"]}
    report("throughput benchmark", failures,
           f"bs1 {rate[1]:.1f}/s, bs16 {rate[16]:.1f}/s, ratio {result['speedup_16_vs_1']:.2f}"
           f" (reference {REFERENCE_SPEEDUP})")
