"""Exact-match trigger span scoring."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

from .corpus import TaggedSentence, TriggerSpan, tags_to_spans


def f_measure(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class Score:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return 100.0 * self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return 100.0 * self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        return f_measure(self.precision, self.recall)

    def __add__(self, other: "Score") -> "Score":
        return Score(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def _key(span):
    return (span.start, span.length) if isinstance(span, TriggerSpan) else tuple(span)


def score_spans(pred: Sequence[Sequence[TriggerSpan]],
                gold: Sequence[Sequence[TriggerSpan]]) -> Score:
    """Spans count as correct only when start and length both match, per sentence."""
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predicted sentences but {len(gold)} gold sentences")
    tp = fp = fn = 0
    for p, g in zip(pred, gold):
        pc = Counter(_key(s) for s in p)
        gc = Counter(_key(s) for s in g)
        hit = sum((pc & gc).values())
        tp += hit
        fp += sum(pc.values()) - hit
        fn += sum(gc.values()) - hit
    return Score(tp, fp, fn)


def score_corpus(pred_spans, gold_sentences: Sequence[TaggedSentence]) -> Score:
    return score_spans(pred_spans, [tags_to_spans(s.tags) for s in gold_sentences])


def _two_places(x: float) -> str:
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def format_report(label: str, precision: float, recall: float, f1: float) -> str:
    return f"{label}  R={_two_places(recall)} P={_two_places(precision)} F1={_two_places(f1)}"


def score_report(score: Score, label: str) -> str:
    return format_report(label, score.precision, score.recall, score.f1)
