"""Versioned single-file archives for every trained artifact.

Layout (all integers little-endian)::

    b"ETRIG"  u32 version  str kind
    u32 n_config   (str key, str value) * n_config      sorted by key
    u32 n_vocab    str token * n_vocab
    u32 n_tensors  (str name, u32 ndim, u64 dim * ndim, f64 value * prod(dims)) * n_tensors

where ``str`` is a u32 byte length followed by UTF-8 bytes.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .corpus import PAD_TOKEN, UNK_TOKEN, Vocabulary
from .decoder import TransitionModel
from .embeddings import EmbeddingTable
from .network import MLPParams, N_TAGS

MAGIC = b"ETRIG"
VERSION = 1
KINDS = ("dnn", "maxent", "embeddings", "transitions")


class ArchiveError(ValueError):
    pass


@dataclass
class ModelArchive:
    kind: str
    config: dict[str, str] = field(default_factory=dict)
    vocab: list[str] = field(default_factory=list)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION


def _put_str(buf, s: str):
    data = s.encode("utf-8")
    buf.write(struct.pack("<I", len(data)))
    buf.write(data)


def encode_archive(archive: ModelArchive) -> bytes:
    if archive.kind not in KINDS:
        raise ArchiveError(f"unknown model kind {archive.kind!r}")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", archive.version))
    _put_str(buf, archive.kind)
    buf.write(struct.pack("<I", len(archive.config)))
    for key in sorted(archive.config):
        _put_str(buf, key)
        _put_str(buf, str(archive.config[key]))
    buf.write(struct.pack("<I", len(archive.vocab)))
    for tok in archive.vocab:
        _put_str(buf, tok)
    buf.write(struct.pack("<I", len(archive.tensors)))
    for name, value in archive.tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        _put_str(buf, name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def save_model(path, archive: ModelArchive):
    """Write atomically: a temp file in the target directory, then rename."""
    data = encode_archive(archive)
    directory = os.path.dirname(os.path.abspath(path))
    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".etrig-")
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as e:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(f"cannot write model archive {path}: {e}") from e


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ArchiveError(f"corrupt archive: truncated in {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def str(self, what):
        raw = self.take(self.u32(what), what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ArchiveError(f"corrupt archive: bad UTF-8 in {what}") from None


def decode_archive(data: bytes, expected_kind: str | None = None) -> ModelArchive:
    r = _Reader(data)
    if data[:len(MAGIC)] != MAGIC:
        raise ArchiveError("unsupported format: bad magic")
    r.pos = len(MAGIC)
    version = r.u32("header")
    if version != VERSION:
        raise ArchiveError(f"unsupported format: version {version} (reader supports {VERSION})")
    kind = r.str("header")
    if kind not in KINDS:
        raise ArchiveError(f"unsupported format: unknown kind {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise ArchiveError(f"wrong model kind: expected {expected_kind}, found {kind}")
    config = {}
    for _ in range(r.u32("config")):
        key = r.str("config")
        config[key] = r.str("config")
    vocab = [r.str("vocabulary") for _ in range(r.u32("vocabulary"))]
    tensors = {}
    for _ in range(r.u32("tensor table")):
        name = r.str("tensor name")
        ndim = r.u32(f"tensor {name}")
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim, f"tensor {name}"))
        count = int(np.prod(shape, dtype=np.int64))
        raw = r.take(8 * count, f"tensor {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(data):
        raise ArchiveError("corrupt archive: trailing bytes")
    archive = ModelArchive(kind, config, vocab, tensors, version)
    _validate(archive)
    return archive


def read_kind(path) -> str:
    with open(path, "rb") as f:
        head = f.read(256)
    r = _Reader(head)
    if head[:len(MAGIC)] != MAGIC:
        raise ArchiveError("unsupported format: bad magic")
    r.pos = len(MAGIC)
    r.u32("header")
    return r.str("header")


def load_model(path, expected_kind: str | None = None) -> ModelArchive:
    with open(path, "rb") as f:
        return decode_archive(f.read(), expected_kind)


# ---------------------------------------------------------------------------
# shape validation

def _expect(archive: ModelArchive, name: str, shape: tuple):
    t = archive.tensors.get(name)
    if t is None:
        raise ArchiveError(f"corrupt archive: missing tensor {name}")
    if t.shape != tuple(shape):
        raise ArchiveError(f"corrupt archive: tensor {name} has shape {t.shape}, expected {shape}")


def _int(archive: ModelArchive, key: str) -> int:
    try:
        return int(archive.config[key])
    except (KeyError, ValueError):
        raise ArchiveError(f"corrupt archive: config key {key!r} missing or invalid") from None


def _hidden(archive: ModelArchive) -> list[int]:
    try:
        return [int(h) for h in archive.config["hidden"].split(",")]
    except (KeyError, ValueError):
        raise ArchiveError("corrupt archive: config key 'hidden' missing or invalid") from None


def _validate(archive: ModelArchive):
    kind, V = archive.kind, len(archive.vocab)
    if kind in ("dnn", "embeddings"):
        if archive.vocab[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ArchiveError("corrupt archive: vocabulary lacks reserved PAD/UNK entries")
        dim = _int(archive, "dim")
        _expect(archive, "embedding", (V, dim))
    if kind == "dnn":
        w = _int(archive, "w")
        n_in = (2 * w + 1) * dim
        for i, h in enumerate(_hidden(archive)):
            _expect(archive, f"hidden.{i}.weight", (h, n_in))
            _expect(archive, f"hidden.{i}.bias", (h,))
            n_in = h
        _expect(archive, "output.weight", (N_TAGS, n_in))
        _expect(archive, "output.bias", (N_TAGS,))
    elif kind == "maxent":
        _expect(archive, "weights", (V, N_TAGS))
    elif kind == "transitions":
        _expect(archive, "start", (N_TAGS,))
        _expect(archive, "trans", (N_TAGS, N_TAGS))
    for name, t in archive.tensors.items():
        if np.any(np.isnan(t)) or (kind != "transitions" and not np.all(np.isfinite(t))):
            raise ArchiveError(f"corrupt archive: non-finite values in tensor {name}")


# ---------------------------------------------------------------------------
# conversions

def _vocab_from(tokens: list[str]) -> Vocabulary:
    return Vocabulary(tokens[2:])


def embeddings_archive(table: EmbeddingTable, config: dict | None = None) -> ModelArchive:
    cfg = {k: str(v) for k, v in (config or {}).items()}
    cfg["dim"] = str(table.dim)
    return ModelArchive("embeddings", cfg, list(table.vocab.itos),
                        {"embedding": table.matrix})


def archive_embeddings(archive: ModelArchive) -> EmbeddingTable:
    return EmbeddingTable(_vocab_from(archive.vocab), archive.tensors["embedding"].copy())


def dnn_archive(params: MLPParams, config: dict | None = None) -> ModelArchive:
    cfg = {k: str(v) for k, v in (config or {}).items()}
    cfg.update(dim=str(params.embedding.dim), w=str(params.w),
               hidden=",".join(str(int(h)) for h in params.sizes[1:-1]))
    return ModelArchive("dnn", cfg, list(params.vocab.itos), dict(params.tensors()))


def archive_dnn(archive: ModelArchive) -> MLPParams:
    table = EmbeddingTable(_vocab_from(archive.vocab), archive.tensors["embedding"].copy())
    w = _int(archive, "w")
    hidden = _hidden(archive)
    params = MLPParams(table, [(2 * w + 1) * table.dim, *hidden, N_TAGS], w)
    for name, t in params.tensors().items():
        if name != "embedding":
            t[...] = archive.tensors[name]
    return params


def maxent_archive(model, config: dict | None = None) -> ModelArchive:
    cfg = {k: str(v) for k, v in (config or {}).items()}
    cfg.update(w=str(model.w), l2=repr(model.l2))
    vocab = sorted(model.features, key=model.features.get)
    return ModelArchive("maxent", cfg, vocab, {"weights": model.weights})


def archive_maxent(archive: ModelArchive):
    from .baseline import MaxEntModel
    features = {f: i for i, f in enumerate(archive.vocab)}
    l2 = float(archive.config.get("l2", "0"))
    return MaxEntModel(features, archive.tensors["weights"].copy(), _int(archive, "w"), l2)


def transitions_archive(tm: TransitionModel) -> ModelArchive:
    return ModelArchive("transitions",
                        {"weight": repr(float(tm.weight)), "constrained": str(int(tm.constrained))},
                        [], {"start": tm.start, "trans": tm.trans})


def archive_transitions(archive: ModelArchive) -> TransitionModel:
    try:
        return TransitionModel(archive.tensors["start"], archive.tensors["trans"],
                               float(archive.config.get("weight", "1.0")),
                               archive.config.get("constrained", "1") == "1")
    except ValueError as e:
        raise ArchiveError(f"corrupt archive: {e}") from None
