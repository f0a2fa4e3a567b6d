import pytest

from flatner.data import Vocab
from flatner.encoder import ModelConfig, make_batch
from flatner.lattice import build_lattice, build_trie
from flatner.tagger import FlatTagger

FIGURE_SENTENCE = "重庆人和药店"
FIGURE_WORDS = ["重庆", "重庆人", "人和药店", "药店"]


@pytest.fixture
def figure_trie():
    return build_trie(FIGURE_WORDS)


@pytest.fixture
def figure_lattice(figure_trie):
    return build_lattice(FIGURE_SENTENCE, figure_trie)


def random_case(rng, alphabet=20, max_len=64, max_words=200):
    """A random sentence and a lexicon that mixes planted substrings with noise words."""
    letters = [chr(ord("a") + i) for i in range(alphabet)]
    n = int(rng.integers(1, max_len + 1))
    sentence = "".join(rng.choice(letters, size=n))
    words = []
    for _ in range(int(rng.integers(0, max_words + 1))):
        if rng.random() < 0.5 and n >= 2:
            i = int(rng.integers(0, n - 1))
            j = int(rng.integers(i + 2, min(n, i + 6) + 1))
            words.append(sentence[i:j])
        else:
            words.append("".join(rng.choice(letters, size=int(rng.integers(1, 6)))))
    return sentence, words


def tiny_tagger(seed=0, d_model=8, n_heads=2, ffn_size=12, n_tags=4, mask="none", scale=True):
    """A small tagger over a fixed alphabet and lexicon, dropout disabled."""
    config = ModelConfig(d_model=d_model, n_heads=n_heads, ffn_size=ffn_size, embed_dropout=0.0,
                         output_dropout=0.0, mask=mask, scale_attention=scale)
    trie = build_trie(["ab", "abc", "cd", "bcd", "de"])
    chars = Vocab("abcdef")
    words = Vocab(trie.words)
    tags = Vocab([f"T{i}" for i in range(1, n_tags)], specials=("O",))
    return FlatTagger(config, chars, words, tags, trie, seed=seed)


def randomize(tagger, rng, scale=0.5):
    """Give every parameter (including u, v, transitions) non-trivial values."""
    for p in tagger.params.values():
        p.data[...] = rng.uniform(-scale, scale, size=p.shape)


@pytest.fixture
def tiny():
    return tiny_tagger()


def batch_of(tagger, sentences):
    return make_batch([tagger.lattice(s) for s in sentences], tagger.chars, tagger.words)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
