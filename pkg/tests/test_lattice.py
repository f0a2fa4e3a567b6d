from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatner.lattice import (
    LatticeError,
    LexiconError,
    Match,
    SpanKind,
    build_lattice,
    build_trie,
    flatten,
    load_lexicon,
    match_words,
    recover,
    self_matched,
)

from conftest import FIGURE_SENTENCE, random_case


def brute_force_matches(sentence, words):
    lexicon = {w for w in words if len(w) >= 2}
    return sorted((sentence[i:j + 1], i, j) for i in range(len(sentence))
                  for j in range(i + 1, len(sentence)) if sentence[i:j + 1] in lexicon)


def as_text(matches, trie):
    return [(trie.words[m.word_id], m.head, m.tail) for m in matches]


class TestTrie:
    def test_figure_words(self):
        assert len(build_trie(["重庆", "重庆人", "药店"])) == 3

    def test_single_char_dropped(self):
        assert len(build_trie(["a"])) == 0

    def test_duplicates_counted(self):
        trie = build_trie(["ab", "ab", "abc"])
        assert len(trie) == 2 and trie.duplicates == 1

    def test_empty_word_rejected(self):
        with pytest.raises(LexiconError, match="entry 2"):
            build_trie(["ab", "", "cd"])

    def test_prefix_is_not_terminal(self):
        trie = build_trie(["abcd"])
        assert "abc" not in trie and "abcd" in trie

    def test_terminal_count_matches_set(self):
        rng = np.random.default_rng(3)
        letters = list("abcdefgh")
        words = ["".join(rng.choice(letters, size=int(rng.integers(1, 7)))) for _ in range(10_000)]
        trie = build_trie(words)
        expected = {w for w in words if len(w) >= 2}
        assert len(trie) == len(expected)
        assert set(trie.words) == expected

    def test_lexicon_file(self, tmp_path):
        path = tmp_path / "lex.txt"
        path.write_text("重庆 100\n\n药店\n重庆\n", encoding="utf-8")
        trie = load_lexicon(path)
        assert trie.words == ["重庆", "药店"]


class TestMatch:
    def test_figure(self, figure_trie):
        got = as_text(match_words(FIGURE_SENTENCE, figure_trie), figure_trie)
        assert got == [("重庆", 0, 1), ("重庆人", 0, 2), ("人和药店", 2, 5), ("药店", 4, 5)]

    def test_empty_lexicon(self):
        assert match_words("ab", build_trie([])) == []

    def test_random_against_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            sentence, words = random_case(rng)
            trie = build_trie(words)
            got = sorted(as_text(match_words(sentence, trie), trie))
            assert got == brute_force_matches(sentence, words)


class TestFlatten:
    def test_figure(self, figure_lattice):
        flat = figure_lattice
        assert flat.n_chars == 6 and len(flat) == 10
        for i, span in enumerate(flat.spans[:6]):
            assert span.kind is SpanKind.CHAR and span.head == span.tail == i
        assert [(s.token, s.head, s.tail) for s in flat.words] == [
            ("重庆", 0, 1), ("重庆人", 0, 2), ("人和药店", 2, 5), ("药店", 4, 5)]

    def test_no_matches(self):
        flat = build_lattice("abc", build_trie(["xy"]))
        assert len(flat) == 3 and flat.words == []

    def test_match_out_of_range(self):
        with pytest.raises(LatticeError):
            flatten("abc", [Match(0, 1, 3)])

    def test_word_invariants(self, figure_lattice):
        for s in figure_lattice.words:
            assert 0 <= s.head < s.tail < figure_lattice.n_chars
            assert len(s.token) == s.tail - s.head + 1

    def test_deterministic_dump(self, figure_trie):
        assert build_lattice(FIGURE_SENTENCE, figure_trie).dump() == \
            build_lattice(FIGURE_SENTENCE, figure_trie).dump()


class TestRecover:
    def test_figure(self, figure_lattice):
        g = recover(figure_lattice)
        assert g.characters() == list(FIGURE_SENTENCE)
        assert sorted(g.skip_paths()) == sorted(
            [("重庆", 0, 1), ("重庆人", 0, 2), ("人和药店", 2, 5), ("药店", 4, 5)])
        assert g.is_acyclic()

    def test_chars_only(self):
        g = recover(build_lattice("abcd", build_trie([])))
        assert g.characters() == list("abcd") and g.skip_paths() == []
        assert g.edges == [(0, 1), (1, 2), (2, 3)]

    def test_bad_anchor(self, figure_lattice):
        from dataclasses import replace

        figure_lattice.spans[-1] = replace(figure_lattice.spans[-1], tail=9)
        with pytest.raises(LatticeError):
            recover(figure_lattice)

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet="abcde", min_size=1, max_size=30),
           st.lists(st.text(alphabet="abcde", min_size=1, max_size=5), max_size=30))
    def test_round_trip(self, sentence, words):
        trie = build_trie(words)
        g = recover(build_lattice(sentence, trie))
        assert g.characters() == list(sentence)
        assert Counter(g.skip_paths()) == Counter(brute_force_matches(sentence, words))
        assert g.is_acyclic()


class TestSelfMatched:
    def test_figure_drug(self, figure_lattice):
        tokens = {figure_lattice.spans[k].token for k in self_matched(figure_lattice, 4)}
        assert tokens == {"人和药店", "药店"}

    def test_uncovered(self):
        flat = build_lattice("abcx", build_trie(["ab"]))
        assert self_matched(flat, 3) == []

    def test_out_of_range(self, figure_lattice):
        with pytest.raises(IndexError):
            self_matched(figure_lattice, 6)

    def test_random_against_interval_scan(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            sentence, words = random_case(rng, max_len=30, max_words=40)
            flat = build_lattice(sentence, build_trie(words))
            for i in range(flat.n_chars):
                expected = [k for k, s in enumerate(flat.spans)
                            if s.kind is SpanKind.WORD and s.head <= i <= s.tail]
                assert self_matched(flat, i) == expected
