"""Flat-lattice transformer tagger for lexicon-enhanced Chinese NER."""
from .crf import CRF, log_partition, nll, viterbi
from .data import TaggedSentence, Vocab, load_embeddings, read_corpus, tags_to_entities, entities_to_tags
from .encoder import FlatEncoder, ModelConfig
from .lattice import FlatLattice, Span, SpanKind, Trie, build_lattice, build_trie, flatten, match_words, recover, self_matched
from .position import distances, fuse, sinusoid
from .tagger import FlatTagger
from .training import TrainConfig, lr_schedule, train

__version__ = "0.1.0"

__all__ = [
    "CRF", "log_partition", "nll", "viterbi",
    "TaggedSentence", "Vocab", "load_embeddings", "read_corpus", "tags_to_entities", "entities_to_tags",
    "FlatEncoder", "ModelConfig",
    "FlatLattice", "Span", "SpanKind", "Trie", "build_lattice", "build_trie", "flatten", "match_words",
    "recover", "self_matched",
    "distances", "fuse", "sinusoid",
    "FlatTagger",
    "TrainConfig", "lr_schedule", "train",
]
