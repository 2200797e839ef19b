import numpy as np
import pytest

from etrig import _kernels
from etrig.baseline import (MaxEntConfig, MaxEntModel, _feature_matrix, extract_features,
                            maxent_emissions, maxent_train, objective, objective_grad)
from etrig.corpus import SynthConfig, Tag, TaggedSentence, generate_synthetic
from etrig.decoder import decode_corpus, estimate_transitions
from etrig.evaluation import score_corpus

B, I, O = Tag.B, Tag.I, Tag.O


def test_features_at_sentence_start():
    f = extract_features("abc", 0, w=1)
    assert f == ["U-1=<PAD>", "U0=a", "U+1=b", "B-1=<PAD>a", "B0=ab"]


def test_feature_count():
    for w in (1, 2, 3):
        assert len(extract_features("abcdefg", 3, w)) == 4 * w + 1
    with pytest.raises(ValueError):
        extract_features("abc", 0, 0)


def test_features_are_distinct():
    f = extract_features("a", 0, w=2)
    assert len(set(f)) == len(f)


def separable_toy():
    """x marks a one-character trigger; everything else is O."""
    return [TaggedSentence(tuple(s), tuple(B if c == "x" else O for c in s))
            for s in ["axb", "bxa", "ab", "xab", "bax", "aab", "xbx"]]


def test_zero_epochs_gives_uniform_emissions():
    model = maxent_train(separable_toy(), MaxEntConfig(epochs=0))
    np.testing.assert_allclose(maxent_emissions(model, "axb"), np.log(1 / 3), rtol=1e-14)


def test_separable_toy_is_learned():
    data = separable_toy()
    model = maxent_train(data, MaxEntConfig(epochs=30, w=1))
    tm = estimate_transitions([s.tags for s in data])
    assert score_corpus(decode_corpus(model, tm, data), data).f1 == 100.0
    for s in data:
        assert list(maxent_emissions(model, s.chars).argmax(axis=1)) == [int(t) for t in s.tags]


def test_objective_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    data = separable_toy()
    features = {}
    feats, gold = _feature_matrix(data, features, 1, grow=True)
    feats[::4, 2] = -1  # some dropped features
    for l2 in (0.0, 0.3):
        W = rng.normal(size=(len(features), 3))
        g = objective_grad(W, feats, gold, l2)
        h = 1e-5
        for _ in range(40):
            i, c = int(rng.integers(len(features))), int(rng.integers(3))
            old = W[i, c]
            W[i, c] = old + h
            up = objective(W, feats, gold, l2)
            W[i, c] = old - h
            down = objective(W, feats, gold, l2)
            W[i, c] = old
            num = (up - down) / (2 * h)
            assert abs(num - g[i, c]) / max(abs(num), abs(g[i, c]), 1e-8) < 1e-6


def test_training_objective_never_increases():
    cfg = SynthConfig(n_train=60, n_dev=0, n_test=0, n_unlabeled=0)
    train, _ = generate_synthetic(cfg, 0)
    # a large rate forces rejected epochs
    model = maxent_train(train, MaxEntConfig(lr=5.0, epochs=8))
    assert len(model.losses) == 9
    assert all(b <= a for a, b in zip(model.losses, model.losses[1:]))
    assert model.losses[-1] < model.losses[0]


def test_unseen_features_are_dropped():
    model = maxent_train(separable_toy(), MaxEntConfig(epochs=3, w=1))
    assert model.feature_ids("zzz", 1) == []
    # interior rows see no padding features, so nothing is known there
    np.testing.assert_allclose(maxent_emissions(model, "zzzzz")[1:4], np.log(1 / 3), rtol=1e-14)
    assert maxent_emissions(model, "").shape == (0, 3)


def test_model_rejects_bad_weights():
    with pytest.raises(ValueError):
        MaxEntModel({"a": 0}, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        MaxEntModel({"a": 0}, np.full((1, 3), np.nan))


def test_compiled_epoch_matches_reference():
    rng = np.random.default_rng(5)
    features = {}
    feats, gold = _feature_matrix(separable_toy(), features, 1, grow=True)
    feats[3, 1] = -1
    V = rng.normal(size=(len(features), 3))
    ref = V.copy()
    order = rng.permutation(len(gold))
    lr, lam = 0.2, 0.05
    scale = np.ones(1)
    _kernels.maxent_train_epoch(V, scale, feats, gold, order, lr, lam)
    V *= scale[0]
    for ex in order:
        active = feats[ex][feats[ex] >= 0]
        z = ref[active].sum(axis=0)
        p = np.exp(z - z.max())
        p /= p.sum()
        p[gold[ex]] -= 1
        ref *= 1 - lr * lam
        ref[active] -= lr * p
    np.testing.assert_allclose(V, ref, rtol=1e-10, atol=1e-12)


def test_baseline_shares_decoder_with_network():
    # both models feed the same decode path through sentence_emissions
    model = maxent_train(separable_toy(), MaxEntConfig(epochs=5, w=1))
    tm = estimate_transitions([])
    [spans] = decode_corpus(model, tm, ["axb"])
    assert [(s.start, s.length) for s in spans] == [(1, 1)]


def test_empty_training_set():
    with pytest.raises(ValueError):
        maxent_train([], MaxEntConfig())
