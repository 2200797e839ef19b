import math

import numpy as np
import pytest

from etrig.corpus import Tag, TaggedSentence, bio_violation
from etrig.decoder import (DecodeError, TransitionModel, decode_emissions, decode_sentence,
                           decode_tags, estimate_transitions, exhaustive_decode, load_transition_text,
                           save_transition_text, viterbi)

B, I, O = Tag.B, Tag.I, Tag.O
NEG = float("-inf")


def test_estimate_transitions_counts():
    tm = estimate_transitions([[O, B, I, O], [O, O]], alpha=0)
    assert math.exp(tm.trans[O, B]) == pytest.approx(0.5)
    assert math.exp(tm.trans[O, O]) == pytest.approx(0.5)
    assert tm.trans[O, I] == NEG and tm.start[I] == NEG
    assert math.exp(tm.start[O]) == pytest.approx(1.0)


def test_estimate_transitions_smoothing_and_empty():
    tm = estimate_transitions([])
    np.testing.assert_allclose(np.exp(tm.start[[B, O]]), [0.5, 0.5], rtol=1e-12)
    np.testing.assert_allclose(np.exp(tm.trans[B]), [1 / 3] * 3, rtol=1e-12)
    with pytest.raises(DecodeError):
        estimate_transitions([], alpha=0)


def test_unconstrained_estimate_has_no_forbidden_cells():
    tm = estimate_transitions([[O, B]], constrained=False)
    assert np.all(np.isfinite(tm.start)) and np.all(np.isfinite(tm.trans))


def test_transition_model_validation():
    good = estimate_transitions([])
    with pytest.raises(ValueError):
        TransitionModel(good.start, good.trans + 0.1)
    with pytest.raises(ValueError):
        TransitionModel(np.log([1 / 3] * 3), good.trans)
    with pytest.raises(ValueError):
        TransitionModel(good.start, good.trans, weight=-1)


def test_weight_keeps_forbidden_cells():
    tm = estimate_transitions([[B, I, O]])
    for w in (0.0, 0.5, 3.0):
        start, trans = tm.with_weight(w).scaled()
        assert start[I] == NEG and trans[O, I] == NEG
        np.testing.assert_allclose(trans[B], w * tm.trans[B])


def random_model(rng, constrained):
    def row(forbid=()):
        r = np.log(rng.dirichlet(np.ones(3)))
        r[list(forbid)] = NEG
        return r - np.logaddexp.reduce(r[np.isfinite(r)])
    start = row([I] if constrained else [])
    trans = np.stack([row([I] if (constrained and i == O) else []) for i in range(3)])
    return TransitionModel(start, trans, float(rng.choice([0.0, 0.5, 1.0, 2.0])), constrained)


def random_emissions(rng, T, with_inf=False):
    em = np.log(rng.dirichlet(np.ones(3), size=T))
    if rng.random() < 0.2:
        em = np.round(em, 1)  # provoke ties
    if with_inf:
        mask = rng.random(em.shape) < 0.15
        em[mask] = NEG
    return em


def viterbi_vs_exhaustive(n=200, seed=0):
    """Count of instances where viterbi and brute force agree exactly."""
    rng = np.random.default_rng(seed)
    agree = 0
    for k in range(n):
        T = int(rng.integers(1, 7))
        tm = random_model(rng, constrained=bool(k % 2))
        em = random_emissions(rng, T, with_inf=k % 5 == 0)
        try:
            expected = exhaustive_decode(em, tm)
        except DecodeError:
            with pytest.raises(DecodeError):
                viterbi(em, tm)
            agree += 1
            continue
        got = viterbi(em, tm)
        agree += got[0] == expected[0] and got[1] == expected[1]
    return agree


def test_viterbi_matches_exhaustive_search():
    assert viterbi_vs_exhaustive(200) == 200


def constrained_decodes_valid(n=1000, seed=1):
    rng = np.random.default_rng(seed)
    tm = random_model(rng, constrained=True)
    ok = 0
    for _ in range(n):
        em = rng.normal(scale=3, size=(int(rng.integers(1, 30)), 3))
        em[:, I] += 5  # push hard toward I
        ok += bio_violation(viterbi(em, tm)[0]) is None
    return ok


def test_constrained_decoding_is_always_bio_valid():
    assert constrained_decodes_valid(1000) == 1000


def test_emission_shift_shifts_score():
    rng = np.random.default_rng(2)
    tm = random_model(rng, True)
    em = random_emissions(rng, 7)
    tags, score = viterbi(em, tm)
    tags2, score2 = viterbi(em + 1.5, tm)
    assert tags2 == tags
    assert score2 == pytest.approx(score + 7 * 1.5, abs=1e-9)


def test_zero_weight_unconstrained_is_argmax():
    rng = np.random.default_rng(3)
    tm = estimate_transitions([[B, I, O]], constrained=False).with_weight(0.0)
    for _ in range(50):
        em = rng.normal(size=(9, 3))
        assert viterbi(em, tm)[0] == [Tag(int(j)) for j in em.argmax(axis=1)]


def test_single_position():
    tm = estimate_transitions([[O, B]], alpha=1)
    tags, score = viterbi(np.log([[0.2, 0.7, 0.1]]), tm)
    # I is forbidden at the start; B wins when start favors it enough
    assert tags[0] != I
    expected = max(tm.start[j] + math.log(p) for j, p in zip(range(3), (0.2, 0.7, 0.1)))
    assert score == pytest.approx(expected)


def test_over_constrained_is_an_error():
    tm = estimate_transitions([])
    with pytest.raises(DecodeError):
        viterbi(np.array([[NEG, 0.0, NEG]]), tm)


def test_bad_emission_shapes():
    tm = estimate_transitions([])
    with pytest.raises(DecodeError):
        viterbi(np.zeros((0, 3)), tm)
    with pytest.raises(DecodeError):
        viterbi(np.zeros((2, 4)), tm)
    assert decode_emissions(np.zeros((0, 3)), tm) == []


def test_exhaustive_refuses_long_input():
    with pytest.raises(DecodeError):
        exhaustive_decode(np.zeros((13, 3)), estimate_transitions([]))


class FixedModel:
    def __init__(self, table):
        self.table = table

    def sentence_emissions(self, chars):
        return np.log(np.array([self.table[c] for c in chars]))


def test_decode_sentence():
    model = FixedModel({"a": [0.8, 0.1, 0.1], "b": [0.1, 0.8, 0.1], "c": [0.1, 0.1, 0.8]})
    tm = estimate_transitions([])
    s = TaggedSentence(tuple("cabc"), (O, B, I, O))
    spans = decode_sentence(model, tm, s)
    assert [(x.start, x.length) for x in spans] == [(1, 2)]
    assert decode_sentence(model, tm, "") == []
    # emissions favor O then I; the decoder must return a valid sequence instead
    tags = decode_tags(model, tm, "cb")
    assert bio_violation(tags) is None and tags != [O, I]


def test_transition_text_round_trip(tmp_path):
    tm = estimate_transitions([[O, B, I, O], [B, B]])
    path = tmp_path / "t.txt"
    save_transition_text(path, tm)
    loaded = load_transition_text(path, weight=0.7)
    np.testing.assert_allclose(loaded.trans, tm.trans, atol=1e-15)
    assert loaded.constrained and loaded.weight == 0.7


def test_transition_text_renormalizes_and_errors(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("1 -inf 1\n1 1 1\n2 2 2\n0 -inf 0\n")
    tm = load_transition_text(path)
    np.testing.assert_allclose(np.exp(tm.start[[B, O]]), [0.5, 0.5])
    assert tm.constrained
    path.write_text("1 2\n")
    with pytest.raises(DecodeError):
        load_transition_text(path)
    path.write_text("x 1 1\n1 1 1\n1 1 1\n1 1 1\n")
    with pytest.raises(DecodeError):
        load_transition_text(path)


def test_zero_network_decodes_all_o():
    from etrig.corpus import Vocabulary
    from etrig.embeddings import EmbeddingTable
    from etrig.network import MLPParams
    params = MLPParams(EmbeddingTable(Vocabulary(["a"]), np.zeros((3, 2))), [10, 4, 3], 2)
    third = math.log(1 / 3)
    tm = TransitionModel([math.log(0.1), NEG, math.log(0.9)],
                         [[third] * 3, [third] * 3, [math.log(0.2), NEG, math.log(0.8)]])
    # emissions are all ln(1/3); by hand the best T=3 path is O O O:
    # ln .9 + 2 ln .8 beats O O B (ln .9 + ln .8 + ln .2) and every B-initial path
    _, score = viterbi(params.sentence_emissions("aaa"), tm)
    assert score == pytest.approx(math.log(0.9) + 2 * math.log(0.8) + 3 * math.log(1 / 3))
    assert decode_sentence(params, tm, "aaa") == []
