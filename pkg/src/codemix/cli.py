"""Command-line entry point.

    codemix synth    --out DIR                  write train/valid/test corpora
    codemix pretrain --train F --out DIR        vocab + MLM checkpoint + history
    codemix finetune --train F --valid F --checkpoint C --out DIR
    codemix predict  --checkpoint C --vocab V --test F --out DIR
    codemix evaluate --pred CSV --gold F [--out DIR]
    codemix ablate   --train F --valid F --out DIR

Settings come from a flat ``key=value`` file (``--config``) and ``--set
key=value`` overrides; explicit flags win over both. Exit codes: 0 ok,
1 internal error, 2 bad input.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .corpus import (
    CorpusError, Dataset, SynthConfig, generate_synthetic, read_corpus, split_dataset, strip_labels,
    write_corpus,
)
from .evaluation import EvalReport, LengthMismatch, evaluate, read_predictions, write_predictions
from .model import CheckpointError, ModelConfig, ModelError, load_checkpoint, save_checkpoint
from .pipeline import RunConfig, run_ablation, run_finetune, run_predict, run_pretrain
from .textnorm import NormConfig
from .tokenizer import Vocabulary
from .train import EmptyDataset, ScheduleConfig, TrainConfig, UnlabeledData, write_history

log = logging.getLogger("codemix")

EXIT_OK, EXIT_INTERNAL, EXIT_BAD_INPUT = 0, 1, 2


class BadInput(Exception):
    """Problem with user-supplied input; reported with exit code 2."""


# ---------------------------------------------------------------------------
# configuration

_SECTIONS = {
    "norm": ("norm",),
    "model": ("model",),
    "synth": ("synth",),
    "pretrain": ("pretrain", "pretrain_sched"),
    "finetune": ("finetune", "finetune_sched"),
}
_TOP_LEVEL = {"valid_fraction": float, "vocab_min_freq": int}


def _coerce(text: str, current):
    if isinstance(current, bool):
        low = text.strip().lower()
        if low in ("1", "true", "on", "yes"):
            return True
        if low in ("0", "false", "off", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if current is None:
        text = text.strip()
        if text.lower() in ("", "none"):
            return None
        return int(text)
    return text


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise BadInput(f"config line {n}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def apply_settings(rc: RunConfig, settings: dict[str, str]) -> RunConfig:
    """Apply dotted ``section.field=value`` settings to a RunConfig."""
    updates: dict[str, dict] = {}
    top = {}
    paths = dict(rc.paths)
    for key, value in settings.items():
        section, _, name = key.partition(".")
        try:
            if section == "paths" and name:
                paths[name] = value
            elif section == "ablation" and name in ("preprocessing", "ulmfit"):
                top[name] = _coerce(value, True)
            elif section == "ablation" and name == "seeds":
                top["seeds"] = tuple(int(s) for s in value.replace(",", " ").split())
            elif key in _TOP_LEVEL:
                top[key] = _TOP_LEVEL[key](value)
            elif section in _SECTIONS and name:
                for attr in _SECTIONS[section]:
                    obj = getattr(rc, attr)
                    if name in {f.name for f in dataclasses.fields(obj)}:
                        updates.setdefault(attr, {})[name] = _coerce(value, getattr(obj, name))
                        break
                else:
                    raise BadInput(f"unknown setting {key!r}")
            else:
                raise BadInput(f"unknown setting {key!r}")
        except ValueError as exc:
            raise BadInput(f"bad value for {key!r}: {exc}") from None
    try:
        for attr, fields in updates.items():
            top[attr] = replace(getattr(rc, attr), **fields)
        return replace(rc, paths=paths, **top)
    except ValueError as exc:
        raise BadInput(f"invalid configuration: {exc}") from None


def load_run_config(args) -> RunConfig:
    settings = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise BadInput(f"config file not found: {path}")
        settings.update(parse_config_text(path.read_text(encoding="utf-8")))
    for item in args.set or []:
        if "=" not in item:
            raise BadInput(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        settings[k.strip()] = v.strip()
    for name in ("train", "valid", "test", "vocab", "checkpoint"):
        value = getattr(args, name, None)
        if value:
            settings[f"paths.{name}"] = value
    if getattr(args, "no_preprocessing", False):
        settings["ablation.preprocessing"] = "off"
    if getattr(args, "no_ulmfit", False):
        settings["ablation.ulmfit"] = "off"
    return apply_settings(RunConfig(), settings)


def _path(rc: RunConfig, name: str, required: bool = True) -> Path | None:
    value = rc.paths.get(name)
    if value is None:
        if required:
            raise BadInput(f"missing --{name} path")
        return None
    path = Path(value)
    if not path.exists():
        raise BadInput(f"{name} path does not exist: {path}")
    return path


def _read(path: Path) -> Dataset:
    try:
        return read_corpus(path)
    except CorpusError as exc:
        raise BadInput(f"{path}: {exc}") from None


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_reports(reports: list[EvalReport], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "val_weighted_f1", "val_accuracy"])
        for e, r in enumerate(reports):
            w.writerow([e, f"{r.weighted_f1:.6f}", f"{r.accuracy:.6f}"])


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, rc: RunConfig) -> None:
    out = _out(args)
    data = generate_synthetic(rc.synth, args.seed)
    train, valid = split_dataset(data, rc.valid_fraction, args.seed)
    test_cfg = replace(rc.synth, n_per_class=max(1, rc.synth.n_per_class // 10))
    test = generate_synthetic(test_cfg, args.seed + 1_000_003)
    write_corpus(train, out / "train.conllu")
    write_corpus(valid, out / "valid.conllu")
    write_corpus(strip_labels(test.tweets), out / "test.conllu")
    write_predictions(test.tweets, [tw.label for tw in test], out / "test_gold.csv")
    log.info("wrote %d train, %d valid, %d test tweets to %s", len(train), len(valid), len(test), out)


def cmd_pretrain(args, rc: RunConfig) -> None:
    train = _read(_path(rc, "train"))
    vocab_path = _path(rc, "vocab", required=False)
    vocab = Vocabulary.load(vocab_path) if vocab_path else None
    out = _out(args)
    history = []
    vocab, model, losses = run_pretrain(train, rc, args.seed, vocab, history)
    vocab.save(out / "vocab.txt")
    save_checkpoint(model, out / "pretrained.ckpt")
    write_history(history, out / "pretrain_history.csv")
    log.info("pre-trained %d steps; epoch losses %s", len(history), ", ".join(f"{l:.4f}" for l in losses))


def _load_model(rc: RunConfig):
    try:
        return load_checkpoint(_path(rc, "checkpoint"))
    except CheckpointError as exc:
        raise BadInput(str(exc)) from None


def _load_vocab(rc: RunConfig, checkpoint: Path | None) -> Vocabulary:
    path = _path(rc, "vocab", required=False)
    if path is None and checkpoint is not None:
        guess = checkpoint.parent / "vocab.txt"
        path = guess if guess.exists() else None
    if path is None:
        raise BadInput("missing --vocab path")
    try:
        return Vocabulary.load(path)
    except ValueError as exc:
        raise BadInput(f"{path}: {exc}") from None


def cmd_finetune(args, rc: RunConfig) -> None:
    train = _read(_path(rc, "train"))
    valid = _read(_path(rc, "valid"))
    if not train.labeled or not valid.labeled:
        raise BadInput("finetune needs labeled train and valid corpora")
    out = _out(args)
    if args.from_scratch:
        vocab, model, _ = run_pretrain(train, replace(rc, pretrain=replace(rc.pretrain, max_steps=0)),
                                       args.seed)
    else:
        model = _load_model(rc)
        vocab = _load_vocab(rc, _path(rc, "checkpoint"))
        if vocab.size != model.config.vocab_size:
            raise BadInput(f"vocabulary size {vocab.size} does not match checkpoint "
                           f"({model.config.vocab_size})")
    history = []
    model, reports = run_finetune(model, vocab, train, valid, rc, args.seed, history)
    vocab.save(out / "vocab.txt")
    save_checkpoint(model, out / "finetuned.ckpt")
    write_history(history, out / "finetune_history.csv")
    _write_reports(reports, out / "epoch_reports.csv")
    (out / "final_report.txt").write_text(reports[-1].to_text(), encoding="utf-8")
    log.info("validation weighted-F1 per epoch: %s",
             ", ".join(f"{r.weighted_f1:.4f}" for r in reports))


def cmd_predict(args, rc: RunConfig) -> None:
    model = _load_model(rc)
    if model.head != "classifier":
        raise BadInput("predict needs a fine-tuned (classifier) checkpoint")
    vocab = _load_vocab(rc, _path(rc, "checkpoint"))
    test = _read(_path(rc, "test"))
    out = _out(args)
    preds = run_predict(model, vocab, test, rc)
    write_predictions(test.tweets, preds, out / "predictions.csv")
    log.info("wrote %d predictions", len(preds))


def _gold_labels(path: Path) -> dict:
    if path.suffix == ".csv":
        try:
            return dict(read_predictions(path))
        except ValueError as exc:
            raise BadInput(f"{path}: {exc}") from None
    data = _read(path)
    if not data.labeled:
        raise BadInput(f"{path}: gold corpus must be labeled")
    return {tw.uid: tw.label for tw in data}


def cmd_evaluate(args, rc: RunConfig) -> None:
    for p in (args.pred, args.gold):
        if not Path(p).exists():
            raise BadInput(f"path does not exist: {p}")
    try:
        preds = read_predictions(args.pred)
    except ValueError as exc:
        raise BadInput(f"{args.pred}: {exc}") from None
    gold = _gold_labels(Path(args.gold))
    missing = [uid for uid, _ in preds if uid not in gold]
    if missing:
        raise BadInput(f"{len(missing)} predicted uids missing from gold, e.g. {missing[0]!r}")
    try:
        report = evaluate([gold[uid] for uid, _ in preds], [p for _, p in preds])
    except (LengthMismatch, ValueError) as exc:
        raise BadInput(str(exc)) from None
    text = report.to_text()
    if args.out:
        (_out(args) / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_ablate(args, rc: RunConfig) -> None:
    train = _read(_path(rc, "train"))
    valid = _read(_path(rc, "valid"))
    if not train.labeled or not valid.labeled:
        raise BadInput("ablate needs labeled train and valid corpora")
    out = _out(args)
    seeds = rc.seeds if args.seeds is None else tuple(args.seeds)
    rows = run_ablation(train, valid, rc, seeds)
    with open(out / "ablation.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["configuration", "mean_weighted_f1"] + [f"seed_{s}" for s in seeds])
        for row in rows:
            w.writerow([row.name, f"{row.mean:.6f}"] + [f"{x:.6f}" for x in row.scores])
    for row in rows:
        log.info("%-28s %.4f", row.name, row.mean)


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codemix", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("synth", help="generate a synthetic code-mixed corpus"))
    p = common(sub.add_parser("pretrain", help="build vocabulary and MLM-pretrain"))
    p.add_argument("--train")
    p.add_argument("--vocab")
    p.add_argument("--no-preprocessing", action="store_true")
    p = common(sub.add_parser("finetune", help="swap head and fine-tune the classifier"))
    for name in ("train", "valid", "checkpoint", "vocab"):
        p.add_argument("--" + name)
    p.add_argument("--from-scratch", action="store_true", help="skip pre-training")
    p.add_argument("--no-preprocessing", action="store_true")
    p.add_argument("--no-ulmfit", action="store_true")
    p = common(sub.add_parser("predict", help="write Uid,Sentiment predictions"))
    for name in ("checkpoint", "vocab", "test"):
        p.add_argument("--" + name)
    p.add_argument("--no-preprocessing", action="store_true")
    p = common(sub.add_parser("evaluate", help="score a prediction file"), out_required=False)
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True, help="labeled corpus or Uid,Sentiment CSV")
    p = common(sub.add_parser("ablate", help="preprocessing / ULMFiT ablation table"))
    p.add_argument("--train")
    p.add_argument("--valid")
    p.add_argument("--seeds", type=int, nargs="+")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        rc = load_run_config(args)
        COMMANDS[args.command](args, rc)
    except (BadInput, UnlabeledData, EmptyDataset) as exc:
        print(f"codemix {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"codemix {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
