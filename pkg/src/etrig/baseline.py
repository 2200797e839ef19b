"""Lexical-feature maximum entropy tagger, decoded with the shared Viterbi decoder."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .corpus import PAD_TOKEN, Tag, TaggedSentence
from .network import log_softmax

log = logging.getLogger(__name__)

N_TAGS = len(Tag)


def _offset(i: int) -> str:
    return f"{i:+d}" if i else "0"


def extract_features(chars: Sequence[str], t: int, w: int = 2) -> list[str]:
    """Character unigrams at offsets -w..w and bigrams starting at -w..w-1."""
    if w < 1:
        raise ValueError("window radius must be >= 1")

    def at(i):
        j = t + i
        return chars[j] if 0 <= j < len(chars) else PAD_TOKEN

    feats = [f"U{_offset(i)}={at(i)}" for i in range(-w, w + 1)]
    feats += [f"B{_offset(i)}={at(i)}{at(i + 1)}" for i in range(-w, w)]
    return feats


@dataclass
class MaxEntConfig:
    w: int = 2
    lr: float = 0.1
    epochs: int = 20
    l2: float = 1e-5
    seed: int = 0

    def as_dict(self):
        return asdict(self)


@dataclass
class MaxEntModel:
    features: dict[str, int]
    weights: np.ndarray  # num_features x 3
    w: int = 2
    l2: float = 0.0
    losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.features), N_TAGS):
            raise ValueError(f"weights {self.weights.shape} do not match "
                             f"{len(self.features)} features")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("non-finite maxent weights")

    def feature_ids(self, chars, t) -> list[int]:
        """Known feature ids at position t; unseen features are dropped."""
        ids = (self.features.get(f) for f in extract_features(chars, t, self.w))
        return [i for i in ids if i is not None]

    def sentence_emissions(self, chars) -> np.ndarray:
        return maxent_emissions(self, chars)


def maxent_emissions(model: MaxEntModel, chars) -> np.ndarray:
    chars = getattr(chars, "chars", chars)
    scores = np.zeros((len(chars), N_TAGS))
    for t in range(len(chars)):
        ids = model.feature_ids(chars, t)
        if ids:
            scores[t] = model.weights[ids].sum(axis=0)
    return log_softmax(scores)


def _feature_matrix(sentences, features: dict[str, int], w: int, grow: bool):
    n_feat = 4 * w + 1
    rows, gold = [], []
    for s in sentences:
        for t in range(len(s)):
            ids = []
            for f in extract_features(s.chars, t, w):
                if f not in features and grow:
                    features[f] = len(features)
                ids.append(features.get(f, -1))
            rows.append(ids)
            gold.append(int(s.tags[t]))
    return (np.array(rows, dtype=np.int64).reshape(-1, n_feat),
            np.array(gold, dtype=np.int64))


def objective(weights: np.ndarray, feats: np.ndarray, gold: np.ndarray, l2: float) -> float:
    """Summed NLL over examples plus ``l2/2 * |W|^2``."""
    scores = np.where(feats[..., None] >= 0, weights[feats], 0.0).sum(axis=1)
    logp = log_softmax(scores)
    return float(-logp[np.arange(len(gold)), gold].sum() + 0.5 * l2 * (weights ** 2).sum())


def objective_grad(weights: np.ndarray, feats: np.ndarray, gold: np.ndarray,
                   l2: float) -> np.ndarray:
    """Gradient of ``objective``: for class c and active feature f, p(c) - [c = gold]."""
    scores = np.where(feats[..., None] >= 0, weights[feats], 0.0).sum(axis=1)
    resid = np.exp(log_softmax(scores))
    resid[np.arange(len(gold)), gold] -= 1.0
    grad = l2 * weights
    for q in range(feats.shape[1]):
        active = feats[:, q] >= 0
        np.add.at(grad, feats[active, q], resid[active])
    return grad


def maxent_train(train: Sequence[TaggedSentence], config: MaxEntConfig = MaxEntConfig()
                 ) -> MaxEntModel:
    """Per-position SGD with L2; an epoch that raises the objective is undone and lr halved.

    ``model.losses`` records the accepted per-epoch mean objectives, which are
    therefore non-increasing.
    """
    if not train:
        raise ValueError("empty training set")
    features: dict[str, int] = {}
    feats, gold = _feature_matrix(train, features, config.w, grow=True)
    V = np.zeros((len(features), N_TAGS))
    n = len(gold)
    rng = np.random.default_rng(config.seed)
    lr = config.lr
    best = objective(V, feats, gold, config.l2) / n
    losses = [best]
    for epoch in range(1, config.epochs + 1):
        snapshot = V.copy()
        scale = np.ones(1)
        _kernels.maxent_train_epoch(V, scale, feats, gold, rng.permutation(n), lr, config.l2)
        V *= scale[0]
        loss = objective(V, feats, gold, config.l2) / n
        if loss > best:
            V = snapshot
            lr /= 2
            log.info("maxent epoch %d: objective rose to %.5f, lr -> %g", epoch, loss, lr)
        else:
            best = loss
        losses.append(best)
        log.info("maxent epoch %d objective %.5f", epoch, best)
    return MaxEntModel(features, V, config.w, config.l2, losses)
