"""Command-line interface.

Exit codes: 0 success, 1 usage/configuration error, 2 data or file error,
3 numeric failure.  All output is byte-identical across repeated runs with
the same inputs and seeds.
"""
from __future__ import annotations

import argparse
import sys

from .data import (
    DatasetSplit,
    load_image,
    load_samples,
    scan_dataset,
    split_dataset,
    synth_dataset,
)
from .errors import (
    ConfigError,
    DecodeError,
    DimensionError,
    EmptyDatasetError,
    FormatError,
    NumericError,
)
from .layers import softmax
from .model import NUM_CLASSES, build_model, format_summary, gradcheck_suite, load_checkpoint
from .tensor import argmax
from .train import TrainConfig, evaluate, run_training


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctcnn", description="Deterministic CNN trainer/classifier for 4-class chest CT studies.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("summary", help="print the architecture table")
    p.add_argument("--arch", choices=sorted(("paper", "tiny")), default="paper")
    p.set_defaults(handler=_cmd_summary)

    p = sub.add_parser("train", help="train on a class-per-directory dataset")
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--arch", choices=sorted(("paper", "tiny")), default="paper")
    p.add_argument("--epochs", type=int, default=32)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--out", default="model.cnck", help="checkpoint path")
    p.add_argument("--metrics", default="metrics.csv", help="metrics CSV path")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--split", type=float, default=0.8)
    p.add_argument("--subset", choices=("train", "val", "all"), default="val")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("predict", help="classify a single image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(handler=_cmd_predict)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(handler=_cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a separable synthetic CTT1 dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--size", type=int, choices=(64, 350), default=64)
    p.set_defaults(handler=_cmd_synth)

    return parser


def _cmd_summary(args) -> int:
    model = build_model(args.arch, seed=0)
    print(format_summary(model.summary()))
    return 0


def _cmd_train(args) -> int:
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        seed=args.seed,
        split_ratio=args.split,
        arch=args.arch,
        checkpoint_path=args.out,
        metrics_path=args.metrics,
    )
    class_index, entries = scan_dataset(args.data)
    if len(class_index) != NUM_CLASSES:
        raise ConfigError(f"training expects {NUM_CLASSES} classes, dataset has {len(class_index)}")
    entry_split = split_dataset(entries, config.split_ratio, config.seed)
    model = build_model(config.arch, seed=config.seed)
    model.class_names = list(class_index.names)
    size = model.input_shape[0]
    split = DatasetSplit(
        load_samples(entry_split.train, size),
        load_samples(entry_split.val, size),
        entry_split.seed,
    )
    width = len(str(config.epochs))

    def on_epoch(m):
        print(
            f"epoch {m.epoch:0{width}d}/{config.epochs} "
            f"train_loss {m.train_loss:.6f} train_acc {m.train_acc:.6f} "
            f"val_loss {m.val_loss:.6f} val_acc {m.val_acc:.6f}"
        )

    _, best = run_training(model, split, config, on_epoch)
    print(f"best val_acc {best.val_accuracy:.6f} at epoch {best.epoch}; checkpoint {args.out}")
    print(f"metrics written to {args.metrics}")
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    _, entries = scan_dataset(args.data)
    split = split_dataset(entries, args.split, args.seed)
    subset = {"train": split.train, "val": split.val, "all": split.train + split.val}[args.subset]
    samples = load_samples(subset, model.input_shape[0])
    loss, acc = evaluate(model, samples)
    print(f"loss {loss:.6f}")
    print(f"accuracy {acc:.6f}")
    return 0


def _cmd_predict(args) -> int:
    model = load_checkpoint(args.model)
    image = load_image(args.image, model.input_shape[0])
    logits = model.forward(image, train=False)
    probs = softmax(logits)
    names = model.class_names or [f"class_{i}" for i in range(logits.size)]
    print(f"predicted: {names[argmax(logits)]}")
    for name, p in zip(names, probs.array):
        print(f"{name} {p:.6f}")
    return 0


def _cmd_gradcheck(args) -> int:
    result = gradcheck_suite(seed=args.seed)
    for name, report in result.reports:
        status = "PASS" if report.passed else "FAIL"
        print(
            f"{name:<24} max_rel_err {report.max_rel_err:.3e}  "
            f"checked {report.checked:>3}  skipped {report.skipped:>2}  {status}"
        )
    caught = "caught" if result.negative_control_caught else "MISSED"
    print(f"negative control (corrupted dense gradient): {caught}")
    if result.passed:
        print("gradient check passed")
        return 0
    print("gradient check FAILED")
    return 3


def _cmd_synth(args) -> int:
    written = synth_dataset(args.out, args.per_class, seed=args.seed, size=args.size)
    print(f"wrote {len(written)} CTT1 files under {args.out}")
    return 0


def dispatch(argv) -> int:
    """Parse argv (without the program name) and run one subcommand."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"ctcnn: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and friends
        return 0 if exc.code in (0, None) else 1
    if getattr(args, "handler", None) is None:
        print("ctcnn: error: a subcommand is required (see ctcnn --help)", file=sys.stderr)
        return 1
    try:
        return args.handler(args)
    except (ConfigError, _UsageError) as exc:
        print(f"ctcnn: error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, DecodeError, EmptyDatasetError, DimensionError, FileNotFoundError, OSError) as exc:
        print(f"ctcnn: error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"ctcnn: error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
