"""Entity F1, boundary-only Span F, and Type Acc."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .data import tags_to_entities

Entity = tuple  # (type, start, end), optionally prefixed by a sentence index


def _prf(tp_pred: int, n_pred: int, tp_gold: int, n_gold: int) -> tuple[float, float, float]:
    if n_pred == 0 and n_gold == 0:
        return 1.0, 1.0, 1.0
    p = tp_pred / n_pred if n_pred else 0.0
    r = tp_gold / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def _span(e: Entity) -> tuple:
    # drop the type, keep everything else (sentence index, start, end)
    return e[:-3] + e[-2:]


@dataclass(frozen=True)
class Counts:
    n_gold: int
    n_pred: int
    full_correct: int
    span_correct: int
    gold_span_found: int


def count(gold: Iterable[Entity], pred: Iterable[Entity]) -> Counts:
    gold, pred = set(gold), set(pred)
    gold_spans = {_span(e) for e in gold}
    pred_spans = {_span(e) for e in pred}
    return Counts(
        n_gold=len(gold),
        n_pred=len(pred),
        full_correct=len(gold & pred),
        span_correct=sum(_span(e) in gold_spans for e in pred),
        gold_span_found=sum(_span(e) in pred_spans for e in gold),
    )


def f1(gold: Iterable[Entity], pred: Iterable[Entity]) -> tuple[float, float, float]:
    """Exact-match micro precision, recall, F1.  Two empty sets score 1.0."""
    c = count(gold, pred)
    return _prf(c.full_correct, c.n_pred, c.full_correct, c.n_gold)


def span_f(gold: Iterable[Entity], pred: Iterable[Entity]) -> float:
    """F1 where an entity counts as correct if its boundaries match any gold entity.

    Every prediction is judged on its own, so matches are never merged and
    ``span_f >= f1`` holds for any input.
    """
    c = count(gold, pred)
    return _prf(c.span_correct, c.n_pred, c.gold_span_found, c.n_gold)[2]


def type_acc(gold: Iterable[Entity], pred: Iterable[Entity]) -> float:
    """Full-correct over span-correct predictions; 1.0 when nothing is span-correct."""
    c = count(gold, pred)
    return c.full_correct / c.span_correct if c.span_correct else 1.0


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float
    span_f: float
    type_acc: float
    counts: Counts

    def format(self) -> str:
        return (f"precision={self.precision:.4f} recall={self.recall:.4f} f1={self.f1:.4f} "
                f"span_f={self.span_f:.4f} type_acc={self.type_acc:.4f}")


def score_entities(gold: Iterable[Entity], pred: Iterable[Entity]) -> Scores:
    gold, pred = set(gold), set(pred)
    p, r, f = f1(gold, pred)
    return Scores(p, r, f, span_f(gold, pred), type_acc(gold, pred), count(gold, pred))


def score_tags(gold_tags: Sequence[Sequence[str]], pred_tags: Sequence[Sequence[str]],
               scheme: str = "BMES") -> Scores:
    """Corpus-level scores; entities are keyed by sentence index."""
    if len(gold_tags) != len(pred_tags):
        raise ValueError(f"{len(gold_tags)} gold sequences but {len(pred_tags)} predicted")
    gold, pred = set(), set()
    for i, (g, p) in enumerate(zip(gold_tags, pred_tags)):
        gold.update((i,) + e for e in tags_to_entities(g, scheme))
        pred.update((i,) + e for e in tags_to_entities(p, scheme))
    return score_entities(gold, pred)
