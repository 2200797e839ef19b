"""Character corpora: BIO tags, vocabularies, windows, spans and a synthetic generator."""

from __future__ import annotations

import enum
import random
from collections import Counter
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence


class CorpusError(ValueError):
    """Malformed corpus input or BIO-invalid labels."""


class ConfigError(ValueError):
    pass


class Tag(enum.IntEnum):
    B = 0
    I = 1  # noqa: E741
    O = 2  # noqa: E741


PAD = 0
UNK = 1
PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"


def bio_violation(tags: Sequence[Tag]) -> int | None:
    """Return the first position where ``I`` starts a chunk, or None."""
    prev = Tag.O
    for t, tag in enumerate(tags):
        if tag == Tag.I and prev == Tag.O:
            return t
        prev = tag
    return None


@dataclass(frozen=True)
class TaggedSentence:
    chars: tuple[str, ...]
    tags: tuple[Tag, ...]

    def __post_init__(self):
        object.__setattr__(self, "chars", tuple(self.chars))
        object.__setattr__(self, "tags", tuple(Tag(t) for t in self.tags))
        if len(self.chars) != len(self.tags):
            raise CorpusError(
                f"{len(self.chars)} characters but {len(self.tags)} tags")
        if not self.chars:
            raise CorpusError("empty sentence")
        pos = bio_violation(self.tags)
        if pos is not None:
            where = "at sentence start" if pos == 0 else f"after O at position {pos}"
            raise CorpusError(f"I {where}")

    def __len__(self):
        return len(self.chars)

    @property
    def text(self) -> str:
        return "".join(self.chars)


@dataclass(frozen=True)
class TriggerSpan:
    start: int
    length: int

    def __post_init__(self):
        if self.start < 0 or self.length < 1:
            raise CorpusError(f"invalid span ({self.start}, {self.length})")

    @property
    def end(self) -> int:
        return self.start + self.length


# ---------------------------------------------------------------------------
# labeled / unlabeled formats

def parse_corpus(stream: Iterable[str]) -> list[TaggedSentence]:
    """Read ``<char>\\t<B|I|O>`` lines; blank lines separate sentences."""
    sentences = []
    chars: list[str] = []
    tags: list[Tag] = []
    first_line = 0

    def flush():
        if not chars:
            return
        try:
            sentences.append(TaggedSentence(tuple(chars), tuple(tags)))
        except CorpusError as e:
            raise CorpusError(
                f"sentence {len(sentences) + 1} (line {first_line}): {e}") from None
        chars.clear()
        tags.clear()

    for lineno, line in enumerate(stream, 1):
        line = line.rstrip("\r\n")
        if not line:
            flush()
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorpusError(f"line {lineno}: expected 2 tab-separated fields, got {len(parts)}")
        char, tag = parts
        if len(char) != 1:
            raise CorpusError(f"line {lineno}: expected a single character, got {char!r}")
        if tag not in Tag.__members__:
            raise CorpusError(f"line {lineno}: unknown tag {tag!r}")
        if not chars:
            first_line = lineno
        chars.append(char)
        tags.append(Tag[tag])
    flush()
    return sentences


def format_corpus(sentences: Iterable[TaggedSentence]) -> str:
    blocks = []
    for s in sentences:
        blocks.append("".join(f"{c}\t{t.name}\n" for c, t in zip(s.chars, s.tags)))
    return "\n".join(blocks)


def read_corpus(path) -> list[TaggedSentence]:
    with open(path, encoding="utf-8") as f:
        return parse_corpus(f)


def write_corpus(path, sentences: Iterable[TaggedSentence]):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_corpus(sentences))


def read_unlabeled(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\r\n") for line in f if line.strip("\r\n")]


def write_unlabeled(path, lines: Iterable[str]):
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


# ---------------------------------------------------------------------------
# vocabulary

class Vocabulary:
    """Character index with PAD=0 and UNK=1 reserved."""

    def __init__(self, tokens: Sequence[str] = (), min_count: int = 1):
        self.itos = [PAD_TOKEN, UNK_TOKEN]
        self.stoi = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        self.min_count = min_count
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, tok):
        return tok in self.stoi and self.stoi[tok] > UNK

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def __repr__(self):
        return f"Vocabulary(size={len(self)}, min_count={self.min_count})"

    def index(self, tok: str) -> int:
        i = self.stoi.get(tok, UNK)
        return UNK if i == PAD else i

    @property
    def tokens(self) -> list[str]:
        """Non-reserved tokens in index order."""
        return self.itos[2:]


def _chars_of(item) -> Sequence[str]:
    return item.chars if isinstance(item, TaggedSentence) else item


def char_counts(sentences: Iterable) -> Counter:
    counts: Counter = Counter()
    for s in sentences:
        counts.update(_chars_of(s))
    return counts


def build_vocab(sentences: Iterable, min_count: int = 1) -> Vocabulary:
    """Frequency-descending vocabulary; ties keep first-occurrence order."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    # Counter preserves insertion order, and sorted() is stable
    counts = char_counts(sentences)
    ranked = sorted(counts.items(), key=lambda kv: -kv[1])
    return Vocabulary([tok for tok, n in ranked if n >= min_count], min_count)


def encode(sentence, vocab: Vocabulary) -> list[int]:
    return [vocab.index(c) for c in _chars_of(sentence)]


@dataclass(frozen=True)
class Window:
    center: int
    radius: int
    token_indices: tuple[int, ...]


def window_indices(indices: Sequence[int], w: int) -> list[list[int]]:
    """Per-position lists of the 2w+1 surrounding indices, PAD outside bounds."""
    if w < 1:
        raise ValueError("window radius must be >= 1")
    padded = [PAD] * w + list(indices) + [PAD] * w
    return [padded[t:t + 2 * w + 1] for t in range(len(indices))]


def windows(indices: Sequence[int], w: int) -> list[Window]:
    return [Window(t, w, tuple(win)) for t, win in enumerate(window_indices(indices, w))]


# ---------------------------------------------------------------------------
# spans

def tags_to_spans(tags: Sequence[Tag]) -> list[TriggerSpan]:
    pos = bio_violation(tags)
    if pos is not None:
        raise CorpusError(f"BIO-invalid tag sequence: I at position {pos}")
    spans = []
    start = None
    for t, tag in enumerate(tags):
        if tag != Tag.I and start is not None:
            spans.append(TriggerSpan(start, t - start))
            start = None
        if tag == Tag.B:
            start = t
    if start is not None:
        spans.append(TriggerSpan(start, len(tags) - start))
    return spans


def spans_to_tags(spans: Iterable[TriggerSpan], length: int) -> list[Tag]:
    tags = [Tag.O] * length
    for span in sorted(spans, key=lambda s: s.start):
        if span.end > length:
            raise CorpusError(f"span ({span.start}, {span.length}) exceeds length {length}")
        if any(tags[i] != Tag.O for i in range(span.start, span.end)):
            raise CorpusError(f"span ({span.start}, {span.length}) overlaps another span")
        tags[span.start] = Tag.B
        for i in range(span.start + 1, span.end):
            tags[i] = Tag.I
    return tags


# ---------------------------------------------------------------------------
# synthetic corpora

# disjoint CJK blocks for the generated alphabets
_BACKGROUND_BASE = 0x4E00
_TRIGGER_BASE = 0x6C00
_CUE_BASE = 0x7A00
_EXTRA_BASE = 0x8800


@dataclass
class SynthConfig:
    background_size: int = 200
    extra_background: int = 40
    trigger_alphabet: int = 60
    lexicon_size: int = 30
    lexicon_zipf: float = 1.5
    trigger_min_len: int = 1
    trigger_max_len: int = 3
    cue_count: int = 10
    cue_prob: float = 0.9
    min_len: int = 8
    max_len: int = 30
    trigger_prob: float = 0.7
    max_triggers: int = 3
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    n_unlabeled: int = 50000

    @property
    def n_labeled(self) -> int:
        return self.n_train + self.n_dev + self.n_test

    def validate(self):
        if self.lexicon_size < 1 or self.trigger_alphabet < 1:
            raise ConfigError("trigger lexicon must not be empty")
        if self.background_size < 1:
            raise ConfigError("background alphabet must not be empty")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ConfigError(f"bad sentence length range {self.min_len}-{self.max_len}")
        if not 1 <= self.trigger_min_len <= self.trigger_max_len:
            raise ConfigError("bad trigger length range")
        if self.cue_count < 1 and self.cue_prob > 0:
            raise ConfigError("cue_prob > 0 needs at least one cue character")
        if self.lexicon_zipf < 0:
            raise ConfigError("lexicon_zipf must be >= 0")
        for name in ("cue_prob", "trigger_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be a probability")
        for name in ("n_train", "n_dev", "n_test", "n_unlabeled", "extra_background",
                     "max_triggers"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    @classmethod
    def from_mapping(cls, values: dict) -> "SynthConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown generator setting {key!r}")
            conv = float if known[key] == "float" else int
            try:
                kwargs[key] = conv(raw)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}") from None
        return cls(**kwargs)


@dataclass
class _Alphabets:
    background: list[str]
    extra: list[str]
    cues: list[str]
    lexicon: list[str]
    lexicon_weights: list[float] = field(default_factory=list)


def _alphabets(cfg: SynthConfig, rng: random.Random) -> _Alphabets:
    trig = [chr(_TRIGGER_BASE + i) for i in range(cfg.trigger_alphabet)]
    lexicon: list[str] = []
    seen = set()
    max_words = sum(cfg.trigger_alphabet ** n
                    for n in range(cfg.trigger_min_len, cfg.trigger_max_len + 1))
    if cfg.lexicon_size > max_words:
        raise ConfigError("trigger alphabet too small for the requested lexicon")
    while len(lexicon) < cfg.lexicon_size:
        n = rng.randint(cfg.trigger_min_len, cfg.trigger_max_len)
        word = "".join(rng.choice(trig) for _ in range(n))
        if word not in seen:
            seen.add(word)
            lexicon.append(word)
    return _Alphabets(
        background=[chr(_BACKGROUND_BASE + i) for i in range(cfg.background_size)],
        extra=[chr(_EXTRA_BASE + i) for i in range(cfg.extra_background)],
        cues=[chr(_CUE_BASE + i) for i in range(cfg.cue_count)],
        lexicon=lexicon,
        # Zipfian usage leaves a tail of rarely seen triggers
        lexicon_weights=_zipf_weights(len(lexicon), cfg.lexicon_zipf),
    )


def _zipf_weights(n: int, exponent: float = 1.0) -> list[float]:
    return [1.0 / (r + 1) ** exponent for r in range(n)]


def _sentence(cfg: SynthConfig, alpha: _Alphabets, background: list[str],
              bg_cum: list[float], rng: random.Random) -> TaggedSentence:
    length = rng.randint(cfg.min_len, cfg.max_len)
    n_trig = 0
    while n_trig < cfg.max_triggers and rng.random() < cfg.trigger_prob:
        n_trig += 1
    units = []
    for _ in range(n_trig):
        word = rng.choices(alpha.lexicon, weights=alpha.lexicon_weights)[0]
        cue = rng.choice(alpha.cues) if rng.random() < cfg.cue_prob else ""
        units.append((cue, word))
    # drop triggers until units plus one separator each fit
    while units and sum(len(c) + len(w) for c, w in units) + len(units) - 1 > length:
        units.pop()
    n_bg = length - sum(len(c) + len(w) for c, w in units)
    # gaps between consecutive units need at least one background character
    gaps = [0] + [1] * (len(units) - 1) + [0] if units else [0]
    for _ in range(n_bg - sum(gaps)):
        gaps[rng.randrange(len(gaps))] += 1

    chars: list[str] = []
    tags: list[Tag] = []

    def fill(k):
        chars.extend(rng.choices(background, cum_weights=bg_cum, k=k))
        tags.extend([Tag.O] * k)

    fill(gaps[0])
    for (cue, word), gap in zip(units, gaps[1:]):
        if cue:
            chars.append(cue)
            tags.append(Tag.O)
        chars.extend(word)
        tags.extend([Tag.B] + [Tag.I] * (len(word) - 1))
        fill(gap)
    return TaggedSentence(tuple(chars), tuple(tags))


def _cumulative(weights: list[float]) -> list[float]:
    out, acc = [], 0.0
    for w in weights:
        acc += w
        out.append(acc)
    return out


def generate_synthetic(cfg: SynthConfig, seed: int) -> tuple[list[TaggedSentence], list[str]]:
    """Labeled sentences (all distinct) and unlabeled raw lines from one seeded source.

    Triggers are words from a lexicon over their own alphabet, usually preceded by a
    cue character. Unlabeled text also uses extra background characters that
    never show up in the labeled sentences.
    """
    cfg.validate()
    rng = random.Random(seed)
    alpha = _alphabets(cfg, rng)
    bg = alpha.background
    bg_cum = _cumulative(_zipf_weights(len(bg)))
    full_bg = bg + alpha.extra
    full_cum = _cumulative(_zipf_weights(len(full_bg)))

    labeled: list[TaggedSentence] = []
    seen = set()
    attempts = 0
    while len(labeled) < cfg.n_labeled:
        attempts += 1
        if attempts > 100 * (cfg.n_labeled + 10):
            raise ConfigError("cannot generate enough distinct labeled sentences")
        s = _sentence(cfg, alpha, bg, bg_cum, rng)
        key = (s.chars, s.tags)
        if key not in seen:
            seen.add(key)
            labeled.append(s)
    unlabeled = [_sentence(cfg, alpha, full_bg, full_cum, rng).text
                 for _ in range(cfg.n_unlabeled)]
    return labeled, unlabeled


def split_labeled(labeled: Sequence[TaggedSentence], cfg: SynthConfig):
    """Consecutive train / dev / test slices of ``generate_synthetic`` output."""
    a, b = cfg.n_train, cfg.n_train + cfg.n_dev
    return list(labeled[:a]), list(labeled[a:b]), list(labeled[b:b + cfg.n_test])


def read_keyvalue(path) -> dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values
