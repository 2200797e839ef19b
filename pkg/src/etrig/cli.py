"""Command-line entry point: synth, pretrain, train, tag, eval, sweep.

Settings resolve as built-in defaults < ``--config`` file < command-line flags.
Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import model_io
from .baseline import MaxEntConfig, maxent_train
from .corpus import (ConfigError, CorpusError, SynthConfig, TaggedSentence, build_vocab,
                     generate_synthetic, read_corpus, read_keyvalue, read_unlabeled,
                     spans_to_tags, split_labeled, tags_to_spans, write_corpus, write_unlabeled)
from .decoder import (DecodeError, decode_corpus, decode_tags, estimate_transitions,
                      load_transition_text)
from .embeddings import (FormatError, SGNSConfig, init_embeddings, save_embeddings,
                         skipgram_train)
from .evaluation import Score, score_corpus, score_report
from .network import TrainConfig, train_supervised

log = logging.getLogger("etrig")


class UsageError(Exception):
    """Bad flags, missing files or malformed inputs (exit code 2)."""


INPUT_ERRORS = (UsageError, CorpusError, ConfigError, FormatError, DecodeError,
                model_io.ArchiveError, FileNotFoundError)

DEFAULTS = {
    "synth": {"seed": 0},
    "pretrain": {"seed": 0, "dim": 50, "window": 5, "negatives": 5, "epochs": 5,
                 "lr": 0.025, "min_count": 5, "subsample": 1e-3},
    "train": {"seed": 0, "model": "dnn", "dim": 50, "w": 2, "hidden": "300",
              "lr": None, "epochs": None, "l2": None, "shuffle": True, "patience": 5,
              "alpha": 1.0, "constrained": True, "transition_weight": 1.0},
    "tag": {"transition_weight": None},
    "eval": {"label": "eval"},
    "sweep": {"seed": 0, "dims": "10,25,50,100,200", "w": 2, "hidden": "300",
              "lr": 0.01, "epochs": 30, "l2": 1e-4, "shuffle": True, "patience": 5,
              "alpha": 1.0, "jobs": 1, "pretrain_epochs": 5, "min_count": 5},
}

PATH_KEYS = {"train", "dev", "out", "epoch_log", "dump_dev", "init_embeddings", "transitions",
             "dim_given"}

MODEL_DEFAULTS = {
    "dnn": {"lr": 0.01, "epochs": 30, "l2": 1e-4},
    "maxent": {"lr": 0.1, "epochs": 20, "l2": 1e-5},
}


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and explicit flags (flags win)."""
    settings = dict(DEFAULTS[args.command])
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        for key, value in read_keyvalue(args.config).items():
            settings[key.replace("-", "_")] = value
    for key, value in vars(args).items():
        if key not in ("command", "config", "func") and value is not None:
            settings[key] = value
    return settings


def _log_config(settings: dict):
    for key in sorted(settings):
        log.info("config %s=%s", key, settings[key])


def _need(settings: dict, *keys):
    for key in keys:
        if not settings.get(key):
            raise UsageError(f"missing required setting --{key.replace('_', '-')}")


def _existing(path) -> str:
    if not os.path.exists(path):
        raise UsageError(f"no such file: {path}")
    return path


# ---------------------------------------------------------------------------
# synth

def synth_config(settings: dict) -> SynthConfig:
    keys = set(SynthConfig.__dataclass_fields__)
    return SynthConfig.from_mapping({k: v for k, v in settings.items() if k in keys})


def cmd_synth(settings: dict):
    _need(settings, "out")
    unknown = set(settings) - set(SynthConfig.__dataclass_fields__) - {"seed", "out"}
    if unknown:
        raise ConfigError(f"unknown generator settings: {', '.join(sorted(unknown))}")
    cfg = synth_config(settings)
    labeled, unlabeled = generate_synthetic(cfg, int(settings["seed"]))
    train, dev, test = split_labeled(labeled, cfg)
    out = settings["out"]
    os.makedirs(out, exist_ok=True)
    for name, part in (("train", train), ("dev", dev), ("test", test)):
        write_corpus(os.path.join(out, f"{name}.txt"), part)
    write_unlabeled(os.path.join(out, "unlabeled.txt"), unlabeled)
    print(f"wrote {len(train)} train / {len(dev)} dev / {len(test)} test sentences "
          f"and {len(unlabeled)} unlabeled sentences to {out}")


# ---------------------------------------------------------------------------
# pretrain

def sgns_config(settings: dict) -> SGNSConfig:
    return SGNSConfig(dim=int(settings["dim"]), window=int(settings["window"]),
                      negatives=int(settings["negatives"]), epochs=int(settings["epochs"]),
                      lr=float(settings["lr"]), min_count=int(settings["min_count"]),
                      subsample=float(settings["subsample"]), seed=int(settings["seed"]))


def cmd_pretrain(settings: dict):
    _need(settings, "unlabeled", "out")
    sentences = read_unlabeled(_existing(settings["unlabeled"]))
    cfg = sgns_config(settings)
    try:
        cfg.validate()
        table = skipgram_train(sentences, cfg)
    except ValueError as e:
        raise UsageError(str(e)) from None
    model_io.save_model(settings["out"], model_io.embeddings_archive(table, cfg.as_dict()))
    text_out = settings.get("text_out") or settings["out"] + ".vec"
    save_embeddings(text_out, table)
    print(f"wrote {len(table.vocab)} x {table.dim} embeddings to {settings['out']} and {text_out}")


# ---------------------------------------------------------------------------
# train

def _hidden(value) -> tuple[int, ...]:
    try:
        return tuple(int(h) for h in str(value).split(","))
    except ValueError:
        raise ConfigError(f"bad hidden layer sizes: {value!r}") from None


def train_config(settings: dict) -> TrainConfig:
    return TrainConfig(w=int(settings["w"]), hidden=_hidden(settings["hidden"]),
                       lr=float(settings["lr"]), epochs=int(settings["epochs"]),
                       l2=float(settings["l2"]), shuffle=_bool(settings["shuffle"]),
                       seed=int(settings["seed"]), patience=int(settings["patience"]))


def _transitions(settings: dict, train):
    if settings.get("transitions"):
        return load_transition_text(_existing(settings["transitions"]),
                                    float(settings["transition_weight"]))
    return estimate_transitions([s.tags for s in train], float(settings["alpha"]),
                                _bool(settings["constrained"]),
                                float(settings["transition_weight"]))


def _format_epoch(rec) -> str:
    return f"{rec.epoch}\t{rec.loss:.6f}\t{rec.precision:.2f}\t{rec.recall:.2f}\t{rec.f1:.2f}"


def _dnn_init(settings: dict, train, dim: int):
    if settings.get("init_embeddings"):
        archive = model_io.load_model(_existing(settings["init_embeddings"]), "embeddings")
        table = model_io.archive_embeddings(archive)
        if settings.get("dim_given") and table.dim != dim:
            raise UsageError(f"--dim {dim} does not match embeddings of dimension {table.dim}")
        return table
    return init_embeddings(build_vocab(train), dim, int(settings["seed"]))


def cmd_train(settings: dict):
    _need(settings, "train", "out")
    kind = settings["model"]
    if kind not in MODEL_DEFAULTS:
        raise UsageError(f"unknown model type {kind!r}")
    for key, value in MODEL_DEFAULTS[kind].items():
        if settings.get(key) is None:
            settings[key] = value
    _log_config(settings)
    train = read_corpus(_existing(settings["train"]))
    dev = read_corpus(_existing(settings["dev"])) if settings.get("dev") else []
    if not train:
        raise UsageError("training corpus is empty")
    tm = _transitions(settings, train)
    out = settings["out"]
    epoch_log = settings.get("epoch_log") or out + ".epochs.tsv"
    # paths stay in the log, not the archive, so identical runs give identical files
    snapshot = {k: v for k, v in settings.items() if v is not None and k not in PATH_KEYS}

    if kind == "dnn":
        cfg = train_config(settings)
        init = _dnn_init(settings, train, int(settings["dim"]))
        with open(epoch_log, "w", encoding="utf-8") as f:
            f.write("epoch\tloss\tP\tR\tF1\n")

            def record(rec):
                f.write(_format_epoch(rec) + "\n")
                f.flush()
            try:
                result = train_supervised(train, dev, init, cfg, tm, on_epoch=record)
            except ValueError as e:
                raise UsageError(str(e)) from None
        model = result.params
        archive = model_io.dnn_archive(model, snapshot)
    else:
        cfg = MaxEntConfig(w=int(settings["w"]), lr=float(settings["lr"]),
                           epochs=int(settings["epochs"]), l2=float(settings["l2"]),
                           seed=int(settings["seed"]))
        model = maxent_train(train, cfg)
        with open(epoch_log, "w", encoding="utf-8") as f:
            f.write("epoch\tloss\tP\tR\tF1\n")
            for epoch, loss in enumerate(model.losses[1:], 1):
                f.write(f"{epoch}\t{loss:.6f}\tnan\tnan\tnan\n")
        archive = model_io.maxent_archive(model, snapshot)

    model_io.save_model(out, archive)
    model_io.save_model(out + ".trans", model_io.transitions_archive(tm))
    if dev:
        pred = decode_corpus(model, tm, dev)
        print(score_report(score_corpus(pred, dev), "dev"))
        if settings.get("dump_dev"):
            write_corpus(settings["dump_dev"], _tagged(dev, pred))
    print(f"wrote {kind} model to {out} (transitions {out}.trans, epoch log {epoch_log})")


def _tagged(sentences, spans) -> list[TaggedSentence]:
    return [TaggedSentence(s.chars, spans_to_tags(p, len(s))) for s, p in zip(sentences, spans)]


# ---------------------------------------------------------------------------
# tag

def load_tagger(path):
    kind = model_io.read_kind(_existing(path))
    archive = model_io.load_model(path, kind)
    if kind == "dnn":
        return model_io.archive_dnn(archive)
    if kind == "maxent":
        return model_io.archive_maxent(archive)
    raise UsageError(f"{path} holds a {kind} archive, not a tagger")


def cmd_tag(settings: dict):
    _need(settings, "model", "input", "out")
    model = load_tagger(settings["model"])
    trans_path = settings.get("transitions") or settings["model"] + ".trans"
    if _is_archive(_existing(trans_path)):
        tm = model_io.archive_transitions(model_io.load_model(trans_path, "transitions"))
    else:
        tm = load_transition_text(trans_path)
    if settings.get("transition_weight") is not None:
        tm = tm.with_weight(float(settings["transition_weight"]))
    lines = read_unlabeled(_existing(settings["input"]))
    out = [TaggedSentence(tuple(line), decode_tags(model, tm, line)) for line in lines]
    write_corpus(settings["out"], out)
    print(f"tagged {len(out)} sentences into {settings['out']}")


def _is_archive(path) -> bool:
    with open(path, "rb") as f:
        return f.read(len(model_io.MAGIC)) == model_io.MAGIC


# ---------------------------------------------------------------------------
# eval

def cmd_eval(settings: dict):
    _need(settings, "pred", "gold")
    pred = read_corpus(_existing(settings["pred"]))
    gold = read_corpus(_existing(settings["gold"]))
    if len(pred) != len(gold):
        raise UsageError(f"{len(pred)} predicted sentences but {len(gold)} gold sentences")
    for i, (p, g) in enumerate(zip(pred, gold), 1):
        if p.chars != g.chars:
            raise UsageError(f"sentence {i} differs between prediction and gold")
    score = score_corpus([tags_to_spans(p.tags) for p in pred], gold)
    print(score_report(score, settings["label"]))
    return score


# ---------------------------------------------------------------------------
# sweep

def _sweep_point(job):
    dim, settings = job
    train = read_corpus(settings["train"])
    dev = read_corpus(settings["dev"])
    evaluate_on = read_corpus(settings["test"]) if settings.get("test") else dev
    seed = int(settings["seed"])
    if settings.get("unlabeled"):
        sg = SGNSConfig(dim=dim, epochs=int(settings["pretrain_epochs"]),
                        min_count=int(settings["min_count"]), seed=seed)
        init = skipgram_train(read_unlabeled(settings["unlabeled"]), sg)
    else:
        init = init_embeddings(build_vocab(train), dim, seed)
    tm = estimate_transitions([s.tags for s in train], float(settings["alpha"]))
    result = train_supervised(train, dev, init, train_config(settings), tm)
    score = score_corpus(decode_corpus(result.params, tm, evaluate_on), evaluate_on)
    return dim, score


def run_sweep(settings: dict) -> list[tuple[int, Score]]:
    try:
        dims = [int(d) for d in str(settings["dims"]).split(",")]
    except ValueError:
        raise ConfigError(f"bad dims list {settings['dims']!r}") from None
    if not dims or min(dims) < 1:
        raise UsageError("dims must be a non-empty list of positive integers")
    for key in ("train", "dev", "test", "unlabeled"):
        if settings.get(key):
            _existing(settings[key])
    jobs = [(d, settings) for d in dims]
    if int(settings["jobs"]) > 1:
        with ProcessPoolExecutor(int(settings["jobs"])) as pool:
            return list(pool.map(_sweep_point, jobs))
    return [_sweep_point(j) for j in jobs]


def format_sweep(rows) -> str:
    lines = ["dim\tP\tR\tF1"]
    lines += [f"{d}\t{s.precision:.2f}\t{s.recall:.2f}\t{s.f1:.2f}" for d, s in rows]
    return "\n".join(lines) + "\n"


def cmd_sweep(settings: dict):
    _need(settings, "train", "dev")
    _log_config(settings)
    table = format_sweep(run_sweep(settings))
    if settings.get("out"):
        with open(settings["out"], "w", encoding="utf-8") as f:
            f.write(table)
    sys.stdout.write(table)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="etrig", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        return p

    p = command("synth", "generate a synthetic labeled + unlabeled corpus")
    for name, f in SynthConfig.__dataclass_fields__.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name,
                       type=float if f.type == "float" else int)

    p = command("pretrain", "skip-gram pretraining of character embeddings")
    p.add_argument("--unlabeled")
    p.add_argument("--text-out")
    p.add_argument("--dim", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--negatives", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--min-count", type=int)
    p.add_argument("--subsample", type=float)

    def training_flags(p):
        p.add_argument("--train")
        p.add_argument("--dev")
        p.add_argument("--w", type=int, help="window radius")
        p.add_argument("--hidden", help="comma-separated hidden layer sizes")
        p.add_argument("--lr", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--l2", type=float)
        p.add_argument("--no-shuffle", dest="shuffle", action="store_const", const=False)
        p.add_argument("--patience", type=int)
        p.add_argument("--alpha", type=float, help="transition smoothing")

    p = command("train", "train the DNN tagger or the maxent baseline")
    training_flags(p)
    p.add_argument("--model", choices=sorted(MODEL_DEFAULTS))
    p.add_argument("--dim", type=int)
    p.add_argument("--init-embeddings")
    p.add_argument("--unconstrained", dest="constrained", action="store_const", const=False)
    p.add_argument("--transitions", help="text transition table overriding estimation")
    p.add_argument("--transition-weight", type=float)
    p.add_argument("--epoch-log")
    p.add_argument("--dump-dev", help="write decoded dev predictions here")

    p = command("tag", "tag raw text (one sentence per line)")
    p.add_argument("--model")
    p.add_argument("--input")
    p.add_argument("--transitions")
    p.add_argument("--transition-weight", type=float)

    p = command("eval", "score predictions against gold")
    p.add_argument("pred", nargs="?")
    p.add_argument("gold", nargs="?")
    p.add_argument("--label")

    p = command("sweep", "train one model per embedding dimension")
    training_flags(p)
    p.add_argument("--test")
    p.add_argument("--dims")
    p.add_argument("--unlabeled", help="pretrain each dimension on this text first")
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--min-count", type=int)
    p.add_argument("--jobs", type=int)
    return parser


COMMANDS = {"synth": cmd_synth, "pretrain": cmd_pretrain, "train": cmd_train,
            "tag": cmd_tag, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    verbose = args.verbose
    del args.verbose
    try:
        settings = resolve(args)
        if args.command == "train":
            settings["dim_given"] = args.dim is not None
        if args.command not in ("train", "sweep"):
            _log_config(settings)
        COMMANDS[args.command](settings)
    except INPUT_ERRORS as e:
        print(f"etrig {args.command}: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        if verbose:
            raise
        print(f"etrig {args.command}: internal error: {e!r}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
