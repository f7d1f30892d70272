"""Training loop with per-epoch metrics and checkpoint-on-best.

The loop is fully deterministic given (dataset, config, seed): batches are
reshuffled with a per-epoch seed, gradients are averaged over each batch in
sample order, and both splits are evaluated in inference mode after every
epoch.  `elapsed_s` in the metrics is reserved and always written as 0, so
identical runs produce byte-identical metrics files and console output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DatasetSplit, make_batches
from .errors import ConfigError, DimensionError, NumericError
from .layers import softmax_cross_entropy
from .model import Sequential, save_checkpoint
from .optim import Adam
from .tensor import argmax


@dataclass
class TrainConfig:
    epochs: int = 32
    batch_size: int = 32
    lr: float = 0.001
    seed: int = 42
    split_ratio: float = 0.8
    arch: str = "paper"
    checkpoint_path: str | None = None
    metrics_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split ratio must be in (0, 1), got {self.split_ratio}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    elapsed_s: float


@dataclass(frozen=True)
class BestCheckpoint:
    epoch: int
    val_accuracy: float
    path: str | None


def accuracy(predictions, truths) -> float:
    """Fraction of positions where prediction equals truth."""
    if len(predictions) != len(truths):
        raise DimensionError(f"{len(predictions)} predictions vs {len(truths)} truths")
    if len(predictions) == 0:
        raise ConfigError("accuracy of an empty prediction list is undefined")
    return sum(int(p) == int(t) for p, t in zip(predictions, truths)) / len(predictions)


def evaluate(model: Sequential, samples) -> tuple[float, float]:
    """Mean loss and accuracy over samples, inference mode, in list order."""
    if not samples:
        raise ConfigError("cannot evaluate an empty sample list")
    total_loss = 0.0
    correct = 0
    for sample in samples:
        logits = model.forward(sample.image, train=False)
        loss, _, _ = softmax_cross_entropy(logits, sample.label)
        total_loss += loss
        if argmax(logits) == sample.label:
            correct += 1
    return total_loss / len(samples), correct / len(samples)


def write_metrics_csv(history, path) -> None:
    """One row per epoch; floats with 6 decimal places; LF newlines."""
    lines = ["epoch,train_loss,train_acc,val_loss,val_acc,elapsed_s"]
    for m in history:
        lines.append(
            f"{m.epoch},{m.train_loss:.6f},{m.train_acc:.6f},{m.val_loss:.6f},{m.val_acc:.6f},{m.elapsed_s:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")


def run_training(model: Sequential, split: DatasetSplit, config: TrainConfig, on_epoch=None):
    """Train with Adam, gradients averaged per batch.

    A checkpoint is saved whenever validation accuracy strictly exceeds the
    best seen so far, so ties keep the earlier epoch and the file on disk
    always holds the best model.  Returns (metrics history, best checkpoint).
    """
    train_samples, val_samples = split.train, split.val
    if not train_samples or not val_samples:
        raise ConfigError("both splits must be nonempty for training")
    params = model.parameters()
    optimizer = Adam(config.lr)
    history: list[EpochMetrics] = []
    best = BestCheckpoint(0, -1.0, None)
    for epoch in range(1, config.epochs + 1):
        for batch_index, batch in enumerate(make_batches(train_samples, config.batch_size, config.seed, epoch)):
            grad_sums = [np.zeros_like(p) for p in params]
            for sample in batch:
                try:
                    logits = model.forward(sample.image, train=True)
                    loss, _, dlogits = softmax_cross_entropy(logits, sample.label)
                    grads = model.backward(dlogits)
                except NumericError as exc:
                    raise NumericError(f"training aborted at epoch {epoch}, batch {batch_index}: {exc}") from None
                if not math.isfinite(loss):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {batch_index}")
                for total, grad in zip(grad_sums, grads):
                    total += grad
            for total in grad_sums:
                total *= 1.0 / len(batch)
            optimizer.step(params, grad_sums)
        train_loss, train_acc = evaluate(model, train_samples)
        val_loss, val_acc = evaluate(model, val_samples)
        metrics = EpochMetrics(epoch, train_loss, train_acc, val_loss, val_acc, 0.0)
        history.append(metrics)
        if on_epoch is not None:
            on_epoch(metrics)
        if val_acc > best.val_accuracy:
            best = BestCheckpoint(epoch, val_acc, str(config.checkpoint_path) if config.checkpoint_path else None)
            if config.checkpoint_path:
                save_checkpoint(model, config.checkpoint_path)
    if config.metrics_path:
        write_metrics_csv(history, config.metrics_path)
    return history, best
