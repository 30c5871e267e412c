"""Command line entry point: ``bimodel {train,eval,predict,gradcheck,ablate}``.

Exit codes: 0 success, 1 usage or config error, 2 data error (unreadable
corpus or checkpoint), 3 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .data import (CorpusFormatError, UsageError, build_vocab, check_atis_counts, load_corpus,
                   split_dev)
from .gradcheck import THRESHOLD, run_gradcheck
from .metrics import EvalReport, evaluate
from .model import BiModel, predict
from .tensor import ContractError
from .train import EpochRecord, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("bimodel")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: {message}", EXIT_USAGE)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    for f in dataclasses.fields(RunConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f"cfg_{f.name}", default=None, metavar="VALUE")


def _config_from(args) -> RunConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return load_config(args.config, overrides)


def _load(path: str, cfg: RunConfig, what: str):
    if not path:
        raise CliError(f"no {what} path given", EXIT_USAGE)
    if not Path(path).is_file():
        raise CliError(f"{what} file {path} does not exist", EXIT_DATA)
    return load_corpus(path, cfg.corpus_format or None, lowercase=cfg.lowercase,
                       normalize_digits=cfg.normalize_digits)


def _splits(cfg: RunConfig):
    train_set = _load(cfg.train_path, cfg, "train")
    if cfg.dev_path:
        dev_set = _load(cfg.dev_path, cfg, "dev")
    else:
        train_set, dev_set = split_dev(train_set, min(cfg.dev_split, max(len(train_set) - 1, 0)))
    return train_set, dev_set


def _artifact_paths(checkpoint: str) -> tuple[Path, Path]:
    ckpt = Path(checkpoint)
    return ckpt.with_name(ckpt.name + ".log.jsonl"), ckpt.with_name(ckpt.name + ".config")


def _fit(cfg: RunConfig, train_set, dev_set, log_fh=None) -> tuple[BiModel, object]:
    vocab = build_vocab(train_set, cfg.min_freq)
    model = BiModel(cfg, vocab)

    def on_epoch(rec: EpochRecord):
        if log_fh is not None:
            log_fh.write(json.dumps({"event": "epoch", **rec.to_dict()}, sort_keys=True) + "\n")
            log_fh.flush()

    result = train(model, train_set, dev_set, cfg, on_epoch=on_epoch)
    return model, result


def cmd_train(args) -> int:
    cfg = _config_from(args)
    train_set, dev_set = _splits(cfg)
    test_set = _load(cfg.test_path, cfg, "test") if cfg.test_path else None
    log_path, cfg_path = _artifact_paths(cfg.checkpoint_path)
    Path(cfg.checkpoint_path).parent.mkdir(parents=True, exist_ok=True)
    cfg_path.write_text(cfg.dumps(), encoding="utf-8")
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"event": "config", **cfg.to_dict()}, sort_keys=True) + "\n")
        fh.write(json.dumps({"event": "data", "train": len(train_set), "dev": len(dev_set),
                             "test": len(test_set) if test_set is not None else None}) + "\n")
        model, result = _fit(cfg, train_set, dev_set, fh)
        save_checkpoint(model, cfg.checkpoint_path)
        final = {"event": "done", "best_epoch": result.best_epoch, "checkpoint": cfg.checkpoint_path}
        if test_set is not None:
            final["test"] = evaluate(model, test_set, strict=cfg.strict_chunks).to_dict()
        fh.write(json.dumps(final, sort_keys=True) + "\n")
    print(json.dumps(final, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = model.config
    test_set = _load(args.test_path, cfg, "test")
    if args.check_atis:
        check_atis_counts(test=test_set, vocab=model.vocab)
    report = evaluate(model, test_set, strict=cfg.strict_chunks)
    print(report.to_json())
    print(report.table())
    return EXIT_OK


def cmd_predict(args) -> int:
    tokens = (args.text or "").split()
    if not tokens:
        raise CliError("predict: --text must contain at least one token", EXIT_USAGE)
    model = load_checkpoint(args.checkpoint)
    intent, tags = predict(model, tokens)
    print(f"intent\t{intent}")
    for tok, tag in zip(tokens, tags):
        print(f"{tok}\t{tag}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.size != "small":
        raise CliError(f"gradcheck: unsupported size {args.size!r}", EXIT_USAGE)
    report = run_gradcheck(hidden=8, vocab_size=20, seed=args.seed, max_entries=args.max_entries,
                           threshold=args.threshold)
    for line in report.lines():
        print(line)
    if not report.passed:
        w = report.worst
        print(f"FAIL: worst parameter {w.variant}/{w.loss}/{w.name} error {w.max_error:.3e}", file=sys.stderr)
        return EXIT_VERIFY
    print("OK")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config_from(args)
    train_set, dev_set = _splits(cfg)
    test_set = _load(cfg.test_path, cfg, "test") if cfg.test_path else None
    rows = {}
    for label, share in (("shared", True), ("ablated", False)):
        dev_f1, dev_acc, test_f1, test_acc = [], [], [], []
        for k in range(args.num_seeds):
            run_cfg = cfg.replace(share_states=share, seed=cfg.seed + k)
            model, result = _fit(run_cfg, train_set, dev_set)
            rep = result.best_report
            dev_f1.append(rep.slot_f1 if rep else float("nan"))
            dev_acc.append(rep.intent_accuracy if rep else float("nan"))
            if test_set is not None:
                t = evaluate(model, test_set, strict=cfg.strict_chunks)
                test_f1.append(t.slot_f1)
                test_acc.append(t.intent_accuracy)
        rows[label] = {
            "dev_f1": _mean(dev_f1), "dev_accuracy": _mean(dev_acc),
            "test_f1": _mean(test_f1), "test_accuracy": _mean(test_acc),
            "seeds": [cfg.seed + k for k in range(args.num_seeds)], "dev_f1_per_seed": dev_f1,
        }
    print(f"{'model':<8} {'dev F1':>8} {'dev acc':>8} {'test F1':>8} {'test acc':>8}")
    for label, r in rows.items():
        print(f"{label:<8} {_fmt(r['dev_f1'])} {_fmt(r['dev_accuracy'])} {_fmt(r['test_f1'])} {_fmt(r['test_accuracy'])}")
    if args.json:
        Path(args.json).write_text(json.dumps({"config": cfg.to_dict(), "results": rows}, indent=2), encoding="utf-8")
    return EXIT_OK


def _mean(xs):
    return sum(xs) / len(xs) if xs else None


def _fmt(x) -> str:
    return f"{x:>8.2f}" if x is not None else f"{'-':>8}"


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bimodel", description="Bi-model BLSTM intent detection and slot filling")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write the best checkpoint")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-path", required=True)
    p.add_argument("--check-atis", action="store_true", help="warn if the split differs from canonical ATIS")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="tag one whitespace-tokenized utterance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    p.add_argument("--size", default="small", choices=["small"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=THRESHOLD)
    p.add_argument("--max-entries", type=int, default=64,
                   help="entries probed one by one per tensor; one random direction covers the rest")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train shared and zero-state models side by side")
    _add_config_flags(p)
    p.add_argument("--num-seeds", type=int, default=1)
    p.add_argument("--json", help="also write the results as JSON to this path")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusFormatError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
