import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatner.data import (
    CorpusError,
    EmbeddingError,
    TaggedSentence,
    Vocab,
    entities_to_tags,
    load_embeddings,
    read_corpus,
    tag_vocab,
    tags_to_entities,
    write_corpus,
)


class TestCorpus:
    def test_empty(self, tmp_path):
        (tmp_path / "c.txt").write_text("", encoding="utf-8")
        assert read_corpus(tmp_path / "c.txt") == []

    def test_two_sentences(self, tmp_path):
        (tmp_path / "c.txt").write_text("重 B-LOC\n庆 E-LOC\n人 O\n\n\n药\tB-ORG\n店\tE-ORG\n", encoding="utf-8")
        sents = read_corpus(tmp_path / "c.txt")
        assert [len(s) for s in sents] == [3, 2]
        assert sents[1].tags == ["B-ORG", "E-ORG"]

    def test_malformed_line_reports_number(self, tmp_path):
        (tmp_path / "c.txt").write_text("a O\nb\n", encoding="utf-8")
        with pytest.raises(CorpusError, match=":2:"):
            read_corpus(tmp_path / "c.txt")

    def test_unknown_prefix(self, tmp_path):
        (tmp_path / "c.txt").write_text("a O\nb I-PER\n", encoding="utf-8")
        with pytest.raises(CorpusError, match="BMES"):
            read_corpus(tmp_path / "c.txt", "BMES")
        assert len(read_corpus(tmp_path / "c.txt", "BIO")) == 1

    def test_length_mismatch(self):
        with pytest.raises(CorpusError):
            TaggedSentence(["a", "b"], ["O"])

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        sents = []
        for _ in range(20):
            n = int(rng.integers(1, 12))
            chars = [chr(0x4E00 + int(c)) for c in rng.integers(0, 50, size=n)]
            sents.append(TaggedSentence(chars, entities_to_tags([("PER", 0, 0)], n)))
        write_corpus(tmp_path / "c.txt", sents)
        assert read_corpus(tmp_path / "c.txt") == sents


class TestVocab:
    def test_reserved_and_unk(self):
        v = Vocab(["a", "b", "a"])
        assert v.tokens == ["<pad>", "<unk>", "a", "b"]
        assert v.index("zzz") == 1 and v.token(v.index("b")) == "b"

    def test_deterministic(self):
        assert Vocab("cab") == Vocab("cab") and Vocab("cab") != Vocab("abc")

    def test_tag_vocab_outside_first(self):
        v = tag_vocab([TaggedSentence(["a", "b"], ["B-X", "O"])])
        assert v.tokens[0] == "O" and "B-X" in v

    def test_no_unk_raises(self):
        with pytest.raises(KeyError):
            Vocab(specials=()).index("x")


class TestEntities:
    def test_bio(self):
        assert tags_to_entities(["B-PER", "I-PER", "O"], "BIO") == [("PER", 0, 1)]
        assert tags_to_entities(["B-PER", "B-LOC"], "BIO") == [("PER", 0, 0), ("LOC", 1, 1)]

    def test_bio_lenient(self):
        assert tags_to_entities(["O", "I-PER", "I-PER"], "BIO") == [("PER", 1, 2)]
        assert tags_to_entities(["B-PER", "I-LOC"], "BIO") == [("PER", 0, 0), ("LOC", 1, 1)]

    def test_bmes(self):
        tags = ["B-LOC", "M-LOC", "E-LOC", "S-PER", "O", "B-ORG", "E-ORG"]
        assert tags_to_entities(tags) == [("LOC", 0, 2), ("PER", 3, 3), ("ORG", 5, 6)]

    def test_bmes_lenient(self):
        assert tags_to_entities(["O", "M-PER", "E-PER"]) == [("PER", 1, 2)]
        assert tags_to_entities(["E-PER", "O"]) == [("PER", 0, 0)]
        assert tags_to_entities(["B-PER", "O"]) == [("PER", 0, 0)]
        assert tags_to_entities(["B-PER", "M-PER"]) == [("PER", 0, 1)]

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            entities_to_tags([("A", 0, 2), ("B", 2, 3)], 5)

    @settings(max_examples=300, deadline=None)
    @given(st.data())
    def test_round_trip(self, data):
        n = data.draw(st.integers(1, 25))
        scheme = data.draw(st.sampled_from(["BIO", "BMES"]))
        cuts = sorted(data.draw(st.sets(st.integers(0, n), max_size=n)) | {0, n})
        entities = []
        for a, b in zip(cuts, cuts[1:]):
            if data.draw(st.booleans()):
                entities.append((data.draw(st.sampled_from(["PER", "LOC", "ORG"])), a, b - 1))
        tags = entities_to_tags(entities, n, scheme)
        assert tags_to_entities(tags, scheme) == entities
        assert entities_to_tags(tags_to_entities(tags, scheme), n, scheme) == tags


class TestEmbeddings:
    def test_basic(self, tmp_path):
        (tmp_path / "e.txt").write_text("2 3\n重 0.1 0.2 0.3\n庆 1 2 3\n", encoding="utf-8")
        emb = load_embeddings(tmp_path / "e.txt")
        assert emb.dim == 3 and len(emb.vectors) == 2
        np.testing.assert_array_equal(emb.vectors["庆"], [1, 2, 3])

    def test_duplicate_last_wins(self, tmp_path, caplog):
        (tmp_path / "e.txt").write_text("2 2\na 1 1\na 2 2\n", encoding="utf-8")
        with caplog.at_level(logging.WARNING):
            emb = load_embeddings(tmp_path / "e.txt")
        np.testing.assert_array_equal(emb.vectors["a"], [2, 2])
        assert emb.duplicates == 1 and "duplicate" in caplog.text

    def test_dim_mismatch(self, tmp_path):
        (tmp_path / "e.txt").write_text("1 3\na 1 2\n", encoding="utf-8")
        with pytest.raises(EmbeddingError, match=":2:"):
            load_embeddings(tmp_path / "e.txt")

    def test_vocab_filter_and_matrix(self, tmp_path):
        (tmp_path / "e.txt").write_text("3 2\na 1 1\nb 2 2\nz 3 3\n", encoding="utf-8")
        vocab = Vocab(["a", "b", "c"])
        emb = load_embeddings(tmp_path / "e.txt", vocab)
        assert emb.dropped == 1 and set(emb.vectors) == {"a", "b"}
        m = emb.matrix(vocab, np.random.default_rng(0))
        assert m.shape == (5, 2) and not m[0].any()
        np.testing.assert_array_equal(m[vocab.index("b")], [2, 2])
        assert m[vocab.index("c")].any()

    def test_norms_preserved(self, tmp_path):
        rng = np.random.default_rng(1)
        vecs = rng.normal(size=(100, 16))
        lines = ["100 16"] + [f"w{i} " + " ".join(repr(float(x)) for x in v) for i, v in enumerate(vecs)]
        (tmp_path / "e.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        emb = load_embeddings(tmp_path / "e.txt")
        got = np.array([np.linalg.norm(emb.vectors[f"w{i}"]) for i in range(100)])
        np.testing.assert_allclose(got, np.linalg.norm(vecs, axis=1), rtol=0, atol=1e-6)
