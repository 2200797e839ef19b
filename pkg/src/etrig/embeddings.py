"""Character embedding tables and skip-gram (negative sampling) pretraining."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .corpus import PAD_TOKEN, UNK, UNK_TOKEN, Vocabulary, build_vocab, char_counts

log = logging.getLogger(__name__)


class FormatError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    vocab: Vocabulary
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.vocab):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match vocabulary size {len(self.vocab)}")
        if self.matrix.shape[1] < 1:
            raise ValueError("embedding dimension must be >= 1")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("embedding table has non-finite entries")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.vocab, self.matrix.copy())


@dataclass
class SGNSConfig:
    dim: int = 50
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    min_count: int = 5
    subsample: float = 1e-3
    seed: int = 0

    power = 0.75
    lr_floor_ratio = 1e-4

    def validate(self):
        for name in ("dim", "window", "min_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.negatives < 0 or self.epochs < 0:
            raise ValueError("negatives and epochs must be >= 0")
        if self.lr <= 0 or self.subsample < 0:
            raise ValueError("lr must be > 0 and subsample >= 0")

    def as_dict(self):
        return asdict(self)


def init_embeddings(vocab: Vocabulary, d: int, seed: int) -> EmbeddingTable:
    if d < 1:
        raise ValueError("embedding dimension must be >= 1")
    rng = np.random.default_rng(seed)
    bound = 0.5 / d
    return EmbeddingTable(vocab, rng.uniform(-bound, bound, size=(len(vocab), d)))


def neg_sampling_dist(frequencies: Mapping[str, int]) -> np.ndarray:
    """Unigram^0.75 noise distribution, in the mapping's order, reserved tokens skipped."""
    counts = np.array([n for tok, n in frequencies.items()
                       if tok not in (PAD_TOKEN, UNK_TOKEN)], dtype=np.float64)
    if counts.size == 0 or counts.sum() <= 0:
        raise ValueError("negative sampling needs at least one token with a positive count")
    weights = counts ** SGNSConfig.power
    return weights / weights.sum()


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return np.exp(_log_sigmoid(x))


def sgns_pair_loss_grad(v_center, u_context, u_negs=()):
    """Negative-sampling loss for one (center, context) pair and its gradients.

    Returns ``(loss, d_center, d_context, d_negs)``;
    loss = -log s(u_ctx . v) - sum_n log s(-u_n . v).
    """
    v = np.asarray(v_center, dtype=np.float64)
    u = np.asarray(u_context, dtype=np.float64)
    negs = np.asarray(u_negs, dtype=np.float64).reshape(-1, v.shape[0]) if len(u_negs) else \
        np.zeros((0, v.shape[0]))
    if v.ndim != 1 or u.shape != v.shape or negs.shape[1] != v.shape[0]:
        raise ValueError("center, context and negative vectors must share one dimension")
    pos = u @ v
    neg = negs @ v
    loss = -_log_sigmoid(pos) - _log_sigmoid(-neg).sum()
    g_pos = _sigmoid(pos) - 1.0
    g_neg = _sigmoid(neg)
    d_v = g_pos * u + g_neg @ negs
    d_u = g_pos * v
    d_negs = np.outer(g_neg, v)
    return float(loss), d_v, d_u, d_negs


def _keep_probs(vocab: Vocabulary, counts, threshold: float) -> np.ndarray:
    keep = np.ones(len(vocab))
    if threshold <= 0:
        return keep
    total = sum(counts[t] for t in vocab.tokens)
    for i, tok in enumerate(vocab.tokens, start=2):
        ratio = threshold * total / counts[tok]
        keep[i] = min(1.0, np.sqrt(ratio) + ratio)
    return keep


def skipgram_train(sentences: Sequence[str], config: SGNSConfig,
                   seed: int | None = None) -> EmbeddingTable:
    """Pretrain character vectors on raw text; the context table is discarded.

    Single-threaded and bit-reproducible for a fixed seed.
    """
    config.validate()
    seed = config.seed if seed is None else seed
    vocab = build_vocab(sentences, config.min_count)
    if len(vocab.tokens) == 0:
        raise ValueError("no characters left after min_count filtering")
    table = init_embeddings(vocab, config.dim, seed)
    if config.epochs == 0:
        return table

    counts = char_counts(sentences)
    encoded, starts = [], [0]
    for s in sentences:
        encoded.extend(i for i in (vocab.index(c) for c in s) if i != UNK)
        starts.append(len(encoded))
    corpus = np.array(encoded, dtype=np.int64)
    noise = neg_sampling_dist({t: counts[t] for t in vocab.tokens})
    W = table.matrix
    C = np.zeros_like(W)
    loss = _kernels.sgns_train(
        W, C, corpus, np.array(starts, dtype=np.int64),
        _keep_probs(vocab, counts, config.subsample), np.cumsum(noise), 2,
        config.epochs, config.window, config.negatives, config.lr,
        config.lr * config.lr_floor_ratio, seed)
    log.info("skip-gram: %d tokens, vocab %d, final epoch pair loss %.4f",
             corpus.size, len(vocab), loss)
    return EmbeddingTable(vocab, W)


def lookup_concat(table: EmbeddingTable, window) -> np.ndarray:
    idx = np.asarray(getattr(window, "token_indices", window), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.matrix.shape[0]):
        raise IndexError("window index outside the embedding table")
    return table.matrix[idx].reshape(-1)


def cosine(table: EmbeddingTable, a: str, b: str) -> float:
    x = table.matrix[table.vocab.index(a)]
    y = table.matrix[table.vocab.index(b)]
    return float(x @ y / (np.linalg.norm(x) * np.linalg.norm(y)))


# ---------------------------------------------------------------------------
# text interchange format

def save_embeddings(path, table: EmbeddingTable):
    for tok in table.vocab.tokens:
        if not tok or any(ch.isspace() for ch in tok):
            raise FormatError(f"token {tok!r} contains whitespace")
    order = list(range(2, len(table.vocab))) + [0, 1]
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(table.vocab)} {table.dim}\n")
        for i in order:
            values = " ".join(format(float(x), ".17g") for x in table.matrix[i])
            f.write(f"{table.vocab.itos[i]} {values}\n")


def load_embeddings(path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as f:
        lines = [line.rstrip("\r\n") for line in f if line.strip()]
    if not lines:
        raise FormatError(f"{path}: empty embedding file")
    try:
        size, dim = (int(x) for x in lines[0].split())
    except ValueError:
        raise FormatError(f"{path}: bad header {lines[0]!r}") from None
    rows = lines[1:]
    if len(rows) != size:
        raise FormatError(f"{path}: header declares {size} rows, found {len(rows)}")
    tokens, vectors = [], {}
    for lineno, line in enumerate(rows, 2):
        parts = line.split(" ")
        if len(parts) != dim + 1:
            raise FormatError(f"{path}:{lineno}: expected {dim} values")
        tok = parts[0]
        try:
            vectors[tok] = [float(x) for x in parts[1:]]
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad number") from None
        if tok not in (PAD_TOKEN, UNK_TOKEN):
            tokens.append(tok)
    if PAD_TOKEN not in vectors or UNK_TOKEN not in vectors:
        raise FormatError(f"{path}: missing {PAD_TOKEN} or {UNK_TOKEN} row")
    try:
        vocab = Vocabulary(tokens)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None
    matrix = np.array([vectors[t] for t in vocab.itos], dtype=np.float64)
    return EmbeddingTable(vocab, matrix)
