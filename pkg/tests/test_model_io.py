import os
import struct

import numpy as np
import pytest

from etrig.baseline import MaxEntConfig, maxent_train
from etrig.corpus import SynthConfig, Tag, Vocabulary, generate_synthetic
from etrig.decoder import estimate_transitions
from etrig.embeddings import init_embeddings
from etrig.model_io import (ArchiveError, ModelArchive, archive_dnn, archive_embeddings,
                            archive_maxent, archive_transitions, decode_archive, dnn_archive,
                            embeddings_archive, encode_archive, load_model, maxent_archive,
                            read_kind, save_model, transitions_archive)
from etrig.network import init_params


def dnn_params(seed=0):
    vocab = Vocabulary(["夏", "购", "a"])
    params = init_params(init_embeddings(vocab, 4, seed), (6, 5), 2, seed)
    params.flat[:] = np.random.default_rng(seed).normal(size=params.flat.size) / 3
    return params


def test_dnn_round_trip_is_bit_exact(tmp_path):
    params = dnn_params()
    path = tmp_path / "m.bin"
    save_model(path, dnn_archive(params, {"lr": 0.01}))
    archive = load_model(path, "dnn")
    assert archive.config["lr"] == "0.01"
    loaded = archive_dnn(archive)
    for name, t in params.tensors().items():
        assert np.array_equal(loaded.tensors()[name], t), name
    assert loaded.vocab == params.vocab
    sentence = list("夏a购x夏")
    assert np.array_equal(loaded.sentence_emissions(sentence), params.sentence_emissions(sentence))


def test_save_load_save_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_model(a, dnn_archive(dnn_params(), {"seed": 3, "epochs": 2}))
    save_model(b, load_model(a))
    assert a.read_bytes() == b.read_bytes()


def test_file_size_is_about_8_bytes_per_parameter(tmp_path):
    params = dnn_params()
    path = tmp_path / "m.bin"
    save_model(path, dnn_archive(params))
    n = sum(t.size for t in params.tensors().values())
    size = os.path.getsize(path)
    assert 8 * n < size < 8 * n + 512


def test_other_kinds_round_trip(tmp_path):
    table = init_embeddings(Vocabulary(["a", "b"]), 3, 1)
    save_model(tmp_path / "e", embeddings_archive(table))
    e = archive_embeddings(load_model(tmp_path / "e", "embeddings"))
    assert e.vocab == table.vocab and np.array_equal(e.matrix, table.matrix)

    train, _ = generate_synthetic(SynthConfig(n_train=20, n_dev=0, n_test=0, n_unlabeled=0), 0)
    model = maxent_train(train, MaxEntConfig(epochs=2))
    save_model(tmp_path / "x", maxent_archive(model))
    m = archive_maxent(load_model(tmp_path / "x", "maxent"))
    assert m.features == model.features and np.array_equal(m.weights, model.weights)

    tm = estimate_transitions([[Tag.B, Tag.I, Tag.O]], weight=0.5)
    save_model(tmp_path / "t", transitions_archive(tm))
    t = archive_transitions(load_model(tmp_path / "t", "transitions"))
    assert np.array_equal(t.trans, tm.trans) and t.weight == 0.5 and t.constrained
    assert read_kind(tmp_path / "t") == "transitions"


def test_wrong_kind(tmp_path):
    save_model(tmp_path / "m", dnn_archive(dnn_params()))
    with pytest.raises(ArchiveError, match="wrong model kind"):
        load_model(tmp_path / "m", "maxent")


def test_future_version_is_unsupported():
    data = bytearray(encode_archive(dnn_archive(dnn_params())))
    data[5:9] = struct.pack("<I", 2)
    with pytest.raises(ArchiveError, match="unsupported format"):
        decode_archive(bytes(data))
    with pytest.raises(ArchiveError, match="unsupported format"):
        decode_archive(b"NOPE" + bytes(data[4:]))


def test_truncated_archive():
    data = encode_archive(dnn_archive(dnn_params()))
    with pytest.raises(ArchiveError, match="corrupt archive: truncated"):
        decode_archive(data[:-7])
    with pytest.raises(ArchiveError, match="trailing"):
        decode_archive(data + b"\0")


def test_shape_mismatch_names_tensor():
    archive = dnn_archive(dnn_params())
    archive.tensors["output.weight"] = archive.tensors["output.weight"][:2]
    with pytest.raises(ArchiveError, match="output.weight"):
        decode_archive(encode_archive(archive))


def test_unknown_kind_cannot_be_written():
    with pytest.raises(ArchiveError):
        encode_archive(ModelArchive("crf"))


def test_overwrite_is_atomic(tmp_path, monkeypatch):
    path = tmp_path / "m.bin"
    save_model(path, dnn_archive(dnn_params(0)))
    before = path.read_bytes()

    def boom(src, dst):
        raise OSError("disk full")
    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError, match=str(path)):
        save_model(path, dnn_archive(dnn_params(1)))
    monkeypatch.undo()
    assert path.read_bytes() == before
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".etrig-")]
    save_model(path, dnn_archive(dnn_params(1)))
    assert path.read_bytes() != before
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".etrig-")]
