"""Tag-bigram transition model and Viterbi decoding over emission log-scores."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Tag, TaggedSentence, TriggerSpan, tags_to_spans

NEG_INF = float("-inf")
N_TAGS = len(Tag)


class DecodeError(ValueError):
    pass


def _forbidden(constrained: bool):
    start = np.zeros(N_TAGS, dtype=bool)
    trans = np.zeros((N_TAGS, N_TAGS), dtype=bool)
    if constrained:
        start[Tag.I] = True
        trans[Tag.O, Tag.I] = True
    return start, trans


def _check_row(row, what):
    if np.any(np.isnan(row)) or np.any(row == np.inf):
        raise ValueError(f"{what} contains NaN or +inf")
    finite = row[row > NEG_INF]
    if finite.size == 0:
        raise ValueError(f"{what} has no admissible entry")
    if abs(np.exp(finite).sum() - 1.0) > 1e-9:
        raise ValueError(f"{what} is not a normalized log-distribution")


@dataclass(frozen=True)
class TransitionModel:
    """``trans[i, j]`` is log p(tag j | previous tag i); ``weight`` scales both tables."""

    start: np.ndarray
    trans: np.ndarray
    weight: float = 1.0
    constrained: bool = True

    def __post_init__(self):
        start = np.array(self.start, dtype=np.float64)
        trans = np.array(self.trans, dtype=np.float64)
        if start.shape != (N_TAGS,) or trans.shape != (N_TAGS, N_TAGS):
            raise ValueError("transition tables must be 3 and 3x3")
        if self.weight < 0:
            raise ValueError("transition weight must be >= 0")
        _check_row(start, "start distribution")
        for i in range(N_TAGS):
            _check_row(trans[i], f"transition row {Tag(i).name}")
        if self.constrained and (start[Tag.I] != NEG_INF or trans[Tag.O, Tag.I] != NEG_INF):
            raise ValueError("constrained model must forbid I at start and after O")
        start.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "trans", trans)

    def scaled(self) -> tuple[np.ndarray, np.ndarray]:
        """Weighted tables; forbidden (-inf) cells stay forbidden for any weight."""
        def scale(a):
            return np.where(a == NEG_INF, NEG_INF, self.weight * np.where(a == NEG_INF, 0.0, a))
        return scale(self.start), scale(self.trans)

    def with_weight(self, weight: float) -> "TransitionModel":
        return TransitionModel(self.start, self.trans, weight, self.constrained)


def _normalize(counts: np.ndarray, forbidden: np.ndarray, alpha: float, what: str):
    counts = np.where(forbidden, 0.0, counts + alpha)
    total = counts.sum()
    if total <= 0:
        raise DecodeError(f"no counts for {what} and alpha = 0")
    with np.errstate(divide="ignore"):
        out = np.log(counts / total)
    out[forbidden] = NEG_INF
    return out


def estimate_transitions(tag_sequences: Sequence[Sequence[Tag]], alpha: float = 1.0,
                         constrained: bool = True, weight: float = 1.0) -> TransitionModel:
    """Add-alpha bigram estimates over admissible successors."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    start_counts = np.zeros(N_TAGS)
    trans_counts = np.zeros((N_TAGS, N_TAGS))
    for tags in tag_sequences:
        if len(tags) == 0:
            continue
        start_counts[int(tags[0])] += 1
        for a, b in zip(tags[:-1], tags[1:]):
            trans_counts[int(a), int(b)] += 1
    f_start, f_trans = _forbidden(constrained)
    start = _normalize(start_counts, f_start, alpha, "sentence starts")
    trans = np.stack([_normalize(trans_counts[i], f_trans[i], alpha,
                                 f"successors of {Tag(i).name}") for i in range(N_TAGS)])
    return TransitionModel(start, trans, weight, constrained)


def viterbi(emissions: np.ndarray, tm: TransitionModel) -> tuple[list[Tag], float]:
    """Best tag sequence and its score; ties go to the lower tag code when backtracking."""
    em = np.asarray(emissions, dtype=np.float64)
    if em.ndim != 2 or em.shape[0] < 1 or em.shape[1] != N_TAGS:
        raise DecodeError(f"emissions must be T x {N_TAGS} with T >= 1, got {em.shape}")
    start, trans = tm.scaled()
    delta = start + em[0]
    back = np.zeros((em.shape[0], N_TAGS), dtype=np.int64)
    cols = np.arange(N_TAGS)
    for t in range(1, em.shape[0]):
        cand = delta[:, None] + trans
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], cols] + em[t]
    best = int(np.argmax(delta))
    score = float(delta[best])
    if score == NEG_INF:
        raise DecodeError("every tag sequence has score -inf")
    path = [best]
    for t in range(em.shape[0] - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return [Tag(j) for j in path], score


def exhaustive_decode(emissions: np.ndarray, tm: TransitionModel,
                      max_len: int = 12) -> tuple[list[Tag], float]:
    """Brute force over all 3^T sequences with viterbi's scoring and tie-break."""
    em = np.asarray(emissions, dtype=np.float64)
    if em.ndim != 2 or em.shape[0] < 1 or em.shape[1] != N_TAGS:
        raise DecodeError(f"emissions must be T x {N_TAGS} with T >= 1, got {em.shape}")
    T = em.shape[0]
    if T > max_len:
        raise DecodeError(f"exhaustive search refuses T = {T} > {max_len}")
    start, trans = tm.scaled()
    best, best_key = None, None
    for seq in itertools.product(range(N_TAGS), repeat=T):
        # same accumulation order as viterbi so equal paths give equal floats
        s = start[seq[0]] + em[0, seq[0]]
        for t in range(1, T):
            s = (s + trans[seq[t - 1], seq[t]]) + em[t, seq[t]]
        key = seq[::-1]
        if best is None or s > best or (s == best and key < best_key):
            best, best_key = s, key
    if best == NEG_INF:
        raise DecodeError("every tag sequence has score -inf")
    return [Tag(j) for j in best_key[::-1]], float(best)


def decode_emissions(emissions: np.ndarray, tm: TransitionModel) -> list[Tag]:
    if len(emissions) == 0:
        return []
    return viterbi(emissions, tm)[0]


def decode_sentence(model, tm: TransitionModel, sentence) -> list[TriggerSpan]:
    """Spans predicted by any model exposing ``sentence_emissions(chars)``."""
    chars = sentence.chars if isinstance(sentence, TaggedSentence) else sentence
    tags = decode_emissions(model.sentence_emissions(chars), tm)
    return tags_to_spans(tags)


def decode_tags(model, tm: TransitionModel, sentence) -> list[Tag]:
    chars = sentence.chars if isinstance(sentence, TaggedSentence) else sentence
    return decode_emissions(model.sentence_emissions(chars), tm)


def decode_corpus(model, tm: TransitionModel, sentences) -> list[list[TriggerSpan]]:
    return [decode_sentence(model, tm, s) for s in sentences]


# ---------------------------------------------------------------------------
# text table format: line 1 start log-probs, lines 2-4 the 3x3 rows

def _fmt(x: float) -> str:
    return "-inf" if x == NEG_INF else format(x, ".17g")


def save_transition_text(path, tm: TransitionModel):
    with open(path, "w", encoding="utf-8") as f:
        f.write(" ".join(_fmt(x) for x in tm.start) + "\n")
        for row in tm.trans:
            f.write(" ".join(_fmt(x) for x in row) + "\n")


def _log_normalize(row: np.ndarray) -> np.ndarray:
    finite = row > NEG_INF
    if not finite.any():
        raise ValueError("row has no admissible entry")
    m = row[finite].max()
    return np.where(finite, row - m - np.log(np.exp(row[finite] - m).sum()), NEG_INF)


def load_transition_text(path, weight: float = 1.0) -> TransitionModel:
    """Read a transition table, e.g. exported CRF weights.

    Rows are renormalized to log-distributions; the model counts as constrained
    when both BIO-forbidden cells are -inf.
    """
    with open(path, encoding="utf-8") as f:
        rows = [line.split() for line in f if line.strip()]
    if len(rows) != N_TAGS + 1 or any(len(r) != N_TAGS for r in rows):
        raise DecodeError(f"{path}: expected 4 lines of 3 numbers")
    try:
        values = np.array([[float(x) for x in r] for r in rows])
    except ValueError:
        raise DecodeError(f"{path}: bad number") from None
    if np.any(np.isnan(values)) or np.any(values == np.inf):
        raise DecodeError(f"{path}: NaN or +inf entry")
    try:
        values = np.stack([_log_normalize(r) for r in values])
    except ValueError as e:
        raise DecodeError(f"{path}: {e}") from None
    constrained = values[0, Tag.I] == NEG_INF and values[1 + Tag.O, Tag.I] == NEG_INF
    return TransitionModel(values[0], values[1:], weight, bool(constrained))
