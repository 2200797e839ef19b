"""Window MLP tagger: embedding lookup, tanh hidden layers, softmax over B/I/O.

The numpy functions here (forward, backward, sgd_step) are the reference
implementation; ``train_supervised`` drives a compiled kernel that performs the
same per-example update.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .corpus import Tag, TaggedSentence, Vocabulary, encode, window_indices
from .embeddings import EmbeddingTable, lookup_concat

log = logging.getLogger(__name__)

N_TAGS = len(Tag)


class NumericWarning(RuntimeWarning):
    pass


@dataclass
class TrainConfig:
    w: int = 2
    hidden: tuple[int, ...] = (300,)
    lr: float = 0.01
    epochs: int = 30
    l2: float = 1e-4
    shuffle: bool = True
    seed: int = 0
    patience: int = 5

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    def validate(self):
        if self.w < 1:
            raise ValueError("window radius must be >= 1")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("need at least one hidden layer of positive width")
        if self.lr <= 0 or self.l2 < 0 or self.epochs < 0 or self.patience < 0:
            raise ValueError("lr must be > 0; l2, epochs and patience >= 0")

    def as_dict(self):
        return asdict(self)


class MLPParams:
    """All trainable weights. Layer weights are views into one flat buffer."""

    def __init__(self, embedding: EmbeddingTable, sizes: Sequence[int], w: int,
                 flat: np.ndarray | None = None):
        self.embedding = embedding
        self.w = w
        self.sizes = np.array(sizes, dtype=np.int64)
        if self.sizes[0] != (2 * w + 1) * embedding.dim or self.sizes[-1] != N_TAGS:
            raise ValueError(f"layer sizes {list(sizes)} do not chain from "
                             f"{(2 * w + 1) * embedding.dim} inputs to {N_TAGS} tags")
        w_off, b_off, n = [], [], 0
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            w_off.append(n)
            n += n_in * n_out
            b_off.append(n)
            n += n_out
        self.w_off = np.array(w_off, dtype=np.int64)
        self.b_off = np.array(b_off, dtype=np.int64)
        if flat is None:
            flat = np.zeros(n)
        if flat.shape != (n,):
            raise ValueError(f"expected {n} layer parameters, got {flat.shape}")
        self.flat = flat
        self.layers = []
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            W = flat[w_off[i]:w_off[i] + n_in * n_out].reshape(n_out, n_in)
            b = flat[b_off[i]:b_off[i] + n_out]
            self.layers.append((W, b))

    @property
    def hidden_layers(self):
        return self.layers[:-1]

    @property
    def output(self):
        return self.layers[-1]

    @property
    def vocab(self) -> Vocabulary:
        return self.embedding.vocab

    def copy(self) -> "MLPParams":
        return MLPParams(self.embedding.copy(), self.sizes, self.w, self.flat.copy())

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"embedding": self.embedding.matrix}
        for i, (W, b) in enumerate(self.hidden_layers):
            out[f"hidden.{i}.weight"] = W
            out[f"hidden.{i}.bias"] = b
        out["output.weight"], out["output.bias"] = self.output
        return out

    def sentence_emissions(self, chars) -> np.ndarray:
        return emissions(self, encode(chars, self.vocab))


def init_params(embedding: EmbeddingTable, hidden: Sequence[int], w: int,
                seed: int) -> MLPParams:
    """Glorot-uniform weights, zero biases. The embedding table is used as given."""
    sizes = [(2 * w + 1) * embedding.dim, *hidden, N_TAGS]
    params = MLPParams(embedding, sizes, w)
    rng = np.random.default_rng(seed)
    for W, _ in params.layers:
        bound = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[:] = rng.uniform(-bound, bound, size=W.shape)
    return params


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


@dataclass
class Cache:
    indices: np.ndarray
    activations: list  # h_0 (concatenated window) .. h_L, then output logits
    probs: np.ndarray


def _window_array(params: MLPParams, window) -> np.ndarray:
    idx = np.asarray(getattr(window, "token_indices", window), dtype=np.int64)
    if idx.shape != (2 * params.w + 1,):
        raise ValueError(f"window of {idx.shape} does not match radius {params.w}")
    return idx


def forward(params: MLPParams, window) -> tuple[np.ndarray, Cache]:
    idx = _window_array(params, window)
    h = lookup_concat(params.embedding, idx)
    acts = [h]
    for W, b in params.hidden_layers:
        h = np.tanh(W @ h + b)
        acts.append(h)
    W, b = params.output
    logits = W @ h + b
    acts.append(logits)
    p = softmax(logits)
    return p, Cache(idx, acts, p)


def nll_loss(probs, gold: Tag) -> float:
    p = float(probs[int(gold)])
    if p < 1e-300:
        warnings.warn("gold probability underflowed; clamped to 1e-300", NumericWarning)
        p = 1e-300
    return -np.log(p)


@dataclass
class Gradients:
    layers: list  # (dW, db) per layer, output last
    emb_rows: np.ndarray  # distinct embedding rows touched
    emb_grad: np.ndarray  # one gradient row per entry of emb_rows

    def embedding_dense(self, n_rows: int) -> np.ndarray:
        out = np.zeros((n_rows, self.emb_grad.shape[1]))
        out[self.emb_rows] = self.emb_grad
        return out


def backward(params: MLPParams, window, gold: Tag, cache: Cache,
             l2: float = 0.0) -> Gradients:
    """Exact gradient of ``nll_loss`` (plus ``l2/2 * |W|^2`` over layer weights)."""
    idx = _window_array(params, window)
    if (not np.array_equal(idx, cache.indices)
            or len(cache.activations) != len(params.layers) + 1
            or any(a.shape[0] != n for a, n in zip(cache.activations, params.sizes))):
        raise ValueError("stale cache: it was not produced by forward on these inputs")
    delta = cache.probs.copy()
    delta[int(gold)] -= 1.0
    grads = []
    for k in range(len(params.layers) - 1, -1, -1):
        W, _ = params.layers[k]
        h_in = cache.activations[k]
        dW = np.outer(delta, h_in)
        if l2:
            dW += l2 * W
        grads.append((dW, delta.copy()))
        d_in = W.T @ delta
        delta = d_in * (1.0 - h_in * h_in) if k > 0 else d_in
    grads.reverse()
    d = params.embedding.dim
    rows, inverse = np.unique(idx, return_inverse=True)
    emb = np.zeros((rows.size, d))
    np.add.at(emb, inverse, delta.reshape(-1, d))
    return Gradients(grads, rows, emb)


def sgd_step(params: MLPParams, grads: Gradients, lr: float, l2: float = 0.0) -> MLPParams:
    """In place: theta -= lr * (g + l2 * theta) for layer weights, lr * g elsewhere."""
    names = [f"hidden.{i}" for i in range(len(params.hidden_layers))] + ["output"]
    for name, (W, b), (dW, db) in zip(names, params.layers, grads.layers):
        if dW.shape != W.shape or db.shape != b.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        for suffix, g in (("weight", dW), ("bias", db)):
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name}.{suffix}")
    if not np.all(np.isfinite(grads.emb_grad)):
        raise FloatingPointError("non-finite gradient in embedding")
    for (W, b), (dW, db) in zip(params.layers, grads.layers):
        W -= lr * (dW + l2 * W)
        b -= lr * db
    params.embedding.matrix[grads.emb_rows] -= lr * grads.emb_grad
    return params


def emissions(params: MLPParams, indices: Sequence[int]) -> np.ndarray:
    """Log-probability rows (T x 3) for every position of an encoded sentence."""
    if len(indices) == 0:
        return np.zeros((0, N_TAGS))
    wins = np.array(window_indices(indices, params.w), dtype=np.int64)
    h = params.embedding.matrix[wins].reshape(len(indices), -1)
    for W, b in params.hidden_layers:
        h = np.tanh(h @ W.T + b)
    W, b = params.output
    return log_softmax(h @ W.T + b)


# ---------------------------------------------------------------------------
# training

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    precision: float = float("nan")
    recall: float = float("nan")
    f1: float = float("nan")


@dataclass
class TrainResult:
    params: MLPParams
    log: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0


def make_examples(sentences: Sequence[TaggedSentence], vocab: Vocabulary,
                  w: int) -> tuple[np.ndarray, np.ndarray]:
    wins, gold = [], []
    for s in sentences:
        wins.extend(window_indices(encode(s, vocab), w))
        gold.extend(int(t) for t in s.tags)
    return (np.array(wins, dtype=np.int64).reshape(-1, 2 * w + 1),
            np.array(gold, dtype=np.int64))


def train_epoch(params: MLPParams, wins, gold, order, lr: float, l2: float) -> float:
    """One compiled SGD pass in the given example order; returns mean loss."""
    total = _kernels.mlp_train_epoch(
        params.embedding.matrix, params.flat, params.sizes, params.w_off, params.b_off,
        wins, gold, np.asarray(order, dtype=np.int64), lr, l2)
    if not (np.all(np.isfinite(params.flat)) and np.all(np.isfinite(params.embedding.matrix))):
        raise FloatingPointError("training diverged: non-finite parameters")
    return total / max(len(order), 1)


def mean_loss(params: MLPParams, sentences: Sequence[TaggedSentence]) -> float:
    total, n = 0.0, 0
    for s in sentences:
        em = emissions(params, encode(s, params.vocab))
        total -= em[np.arange(len(s)), [int(t) for t in s.tags]].sum()
        n += len(s)
    return total / max(n, 1)


def train_supervised(train: Sequence[TaggedSentence], dev: Sequence[TaggedSentence] | None,
                     init: EmbeddingTable, config: TrainConfig,
                     transitions=None,
                     on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Per-character SGD over all windows; embeddings are fine-tuned with the rest.

    ``init`` is copied, never mutated. With a dev set, each epoch is decoded
    (Viterbi against ``transitions``, by default estimated from the training
    tags) and scored; with ``patience > 0`` the best dev-F1 epoch is returned.
    """
    from .decoder import decode_corpus, estimate_transitions
    from .evaluation import score_corpus

    config.validate()
    if not train:
        raise ValueError("empty training set")
    known = sum(c in init.vocab for s in train for c in s.chars)
    if known == 0:
        raise ValueError("embedding vocabulary shares no characters with the training corpus")

    params = init_params(init.copy(), config.hidden, config.w, config.seed)
    rng = np.random.default_rng(config.seed)
    wins, gold = make_examples(train, params.vocab, config.w)
    if transitions is None and dev:
        transitions = estimate_transitions([s.tags for s in train])

    result = TrainResult(params)
    best_f1, best, stale = -1.0, None, 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(gold)) if config.shuffle else np.arange(len(gold))
        rec = EpochRecord(epoch, train_epoch(params, wins, gold, order, config.lr, config.l2))
        if dev:
            score = score_corpus(decode_corpus(params, transitions, dev), dev)
            rec.precision, rec.recall, rec.f1 = score.precision, score.recall, score.f1
            if rec.f1 > best_f1:
                best_f1, best, stale = rec.f1, params.copy(), 0
                result.best_epoch = epoch
            else:
                stale += 1
        result.log.append(rec)
        log.info("epoch %d loss %.5f dev P %.2f R %.2f F1 %.2f",
                 epoch, rec.loss, rec.precision, rec.recall, rec.f1)
        if on_epoch:
            on_epoch(rec)
        if config.patience and best is not None and stale >= config.patience:
            break
    if config.patience and best is not None:
        result.params = best
    else:
        result.params = params
        result.best_epoch = len(result.log)
    return result


# ---------------------------------------------------------------------------
# gradient verification

def total_loss(params: MLPParams, examples, l2: float = 0.0) -> float:
    """Sum of per-example objectives; each carries its own ``l2/2 * |W|^2`` term."""
    examples = list(examples)
    loss = sum(nll_loss(forward(params, win)[0], gold) for win, gold in examples)
    if l2:
        loss += len(examples) * 0.5 * l2 * sum(float((W * W).sum()) for W, _ in params.layers)
    return loss


def _grad_tensors(params: MLPParams, grads: Gradients) -> dict[str, np.ndarray]:
    out = {"embedding": grads.embedding_dense(params.embedding.matrix.shape[0])}
    names = [f"hidden.{i}" for i in range(len(params.hidden_layers))] + ["output"]
    for name, (dW, db) in zip(names, grads.layers):
        out[f"{name}.weight"] = dW
        out[f"{name}.bias"] = db
    return out


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


@dataclass
class GradCheckReport:
    max_error: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.max_error.values())

    def failing(self) -> list[str]:
        return [k for k, e in self.max_error.items() if not e < self.tolerance]


def grad_check(params: MLPParams, examples, step: float = 1e-5, tolerance: float = 1e-4,
               l2: float = 0.0, coords_per_tensor: int = 20, seed: int = 0,
               backward_fn=backward) -> GradCheckReport:
    """Compare analytic gradients with central differences on sampled coordinates.

    ``examples`` is a list of (window, gold tag). Embedding coordinates are sampled
    from rows the examples touch, plus one untouched row when there is one.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    examples = list(examples)
    analytic = None
    for win, gold in examples:
        _, cache = forward(params, win)
        g = _grad_tensors(params, backward_fn(params, win, gold, cache, l2=l2))
        analytic = g if analytic is None else {k: analytic[k] + g[k] for k in g}

    rng = np.random.default_rng(seed)
    touched = np.unique([i for win, _ in examples
                         for i in np.asarray(getattr(win, "token_indices", win))])
    untouched = np.setdiff1d(np.arange(params.embedding.matrix.shape[0]), touched)
    report = {}
    for name, tensor in params.tensors().items():
        flat_view = tensor.reshape(-1)
        if name == "embedding":
            rows = list(touched) + list(untouched[:1])
            cands = np.array([r * tensor.shape[1] + c for r in rows for c in range(tensor.shape[1])])
        else:
            cands = np.arange(flat_view.size)
        picks = cands if cands.size <= coords_per_tensor else \
            rng.choice(cands, size=coords_per_tensor, replace=False)
        worst = 0.0
        for i in picks:
            old = flat_view[i]
            flat_view[i] = old + step
            up = total_loss(params, examples, l2)
            flat_view[i] = old - step
            down = total_loss(params, examples, l2)
            flat_view[i] = old
            numeric = (up - down) / (2 * step)
            worst = max(worst, relative_error(analytic[name].reshape(-1)[i], numeric))
        report[name] = worst
    return GradCheckReport(report, tolerance)
