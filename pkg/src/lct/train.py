"""Mini-batch training with Adam, stepped decay, and early stopping on val loss."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, NumericError
from .models import Model, forward
from .optim import OptimizerConfig, adam_step, lr_at_epoch
from .preprocess import SegmentSet, SplitSet
from .tensor import Tensor, cross_entropy_loss, no_grad


@dataclass
class TrainConfig:
    batch_size: int = 300
    max_epochs: int = 300
    early_stop_patience: int = 30
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 1 <= self.early_stop_patience <= self.max_epochs:
            raise ConfigError(f"early_stop_patience must lie in [1, max_epochs], "
                              f"got {self.early_stop_patience}")


@dataclass
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: bool = False

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "Metrics":
        """Derive the four rates; degenerate denominators yield 0 and a flag.

        The ictal class (label 1) is the positive class.
        """
        total = tp + fp + tn + fn
        if total == 0:
            raise ValueError("metrics need at least one prediction")
        degenerate = False
        accuracy = (tp + tn) / total
        if tp + fp == 0:
            precision, degenerate = 0.0, True
        else:
            precision = tp / (tp + fp)
        if tp + fn == 0:
            recall, degenerate = 0.0, True
        else:
            recall = tp / (tp + fn)
        if precision + recall == 0.0:
            f1, degenerate = 0.0, True
        else:
            f1 = 2.0 * precision * recall / (precision + recall)
        return cls(tp, fp, tn, fn, accuracy, precision, recall, f1, degenerate)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
                "accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1, "degenerate": self.degenerate}


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    seconds: float = 0.0

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,val_loss,val_accuracy,learning_rate"]
        for e in range(self.epochs_run):
            lines.append(f"{e},{self.train_loss[e]:.6f},{self.val_loss[e]:.6f},"
                         f"{self.val_accuracy[e]:.6f},{self.learning_rate[e]:.10g}")
        Path(path).write_text("\n".join(lines) + "\n")


def _batches(count: int, batch_size: int):
    for lo in range(0, count, batch_size):
        yield lo, min(lo + batch_size, count)


def predict_labels(model: Model, segset: SegmentSet, batch_size: int = 300) -> np.ndarray:
    """Argmax class per segment, computed without building a graph."""
    out = np.empty(len(segset), dtype=np.uint8)
    with no_grad():
        for lo, hi in _batches(len(segset), batch_size):
            x = Tensor(segset.segments[lo:hi].astype(model.dtype))
            logits = forward(model, x, training=False)
            out[lo:hi] = logits.data.argmax(axis=1).astype(np.uint8)
    return out


def evaluate(model: Model, segset: SegmentSet, batch_size: int = 300) -> Metrics:
    """Confusion counts and rates over a segment set; label 1 is positive."""
    pred = predict_labels(model, segset, batch_size)
    truth = segset.labels
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    tn = int(np.sum((pred == 0) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    return Metrics.from_counts(tp, fp, tn, fn)


def evaluate_loss(model: Model, segset: SegmentSet, batch_size: int = 300,
                  source: str | None = None) -> tuple[float, float]:
    """(mean loss, accuracy) without gradients; source tags the data if given."""
    total_loss = 0.0
    correct = 0
    tags = frozenset([source]) if source else frozenset()
    with no_grad():
        for lo, hi in _batches(len(segset), batch_size):
            x = Tensor(segset.segments[lo:hi].astype(model.dtype), sources=tags)
            logits = forward(model, x, training=False)
            loss = cross_entropy_loss(logits, segset.labels[lo:hi])
            total_loss += float(loss.data) * (hi - lo)
            correct += int((logits.data.argmax(axis=1) == segset.labels[lo:hi]).sum())
    return total_loss / len(segset), correct / len(segset)


def train(model: Model, splits: SplitSet, config: TrainConfig,
          log=None) -> tuple[Model, History]:
    """Train in place; weights end at the best-val-loss epoch, not the last.

    Each epoch reshuffles the training set with the epoch-specific stream of
    one seeded generator, so runs are reproducible end to end.  Training
    batches are tagged 'train' and the graph is only ever built over them;
    val data is evaluated under no_grad with a 'val' tag.  Early stopping
    fires after early_stop_patience epochs without a new best val loss.
    """
    params = model.parameters()
    best_state = [p.tensor.data.copy() for p in params]
    best_val = np.inf
    history = History()
    rng = np.random.default_rng(config.seed)
    started = time.monotonic()
    step = 0

    for epoch in range(config.max_epochs):
        lr = lr_at_epoch(config.optimizer, epoch)
        order = rng.permutation(len(splits.train))
        epoch_loss = 0.0
        for lo, hi in _batches(len(order), config.batch_size):
            take = order[lo:hi]
            x = Tensor(splits.train.segments[take].astype(model.dtype),
                       sources=frozenset(["train"]))
            labels = splits.train.labels[take]
            try:
                logits = forward(model, x, training=True, rng=rng)
                loss = cross_entropy_loss(logits, labels)
            except NumericError as err:
                raise NumericError(f"epoch {epoch}, batch {lo // config.batch_size}: {err}") from err
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite training loss at epoch {epoch}, "
                                   f"batch {lo // config.batch_size}")
            loss.backward()
            step += 1
            adam_step(params, lr, step, config.optimizer.beta1,
                      config.optimizer.beta2, config.optimizer.eps)
            epoch_loss += float(loss.data) * len(take)

        val_loss, val_acc = evaluate_loss(model, splits.val, config.batch_size, source="val")
        history.train_loss.append(epoch_loss / len(splits.train))
        history.val_loss.append(val_loss)
        history.val_accuracy.append(val_acc)
        history.learning_rate.append(lr)
        history.epochs_run = epoch + 1
        if log is not None:
            log(f"epoch {epoch:3d}  lr {lr:.2e}  train {history.train_loss[-1]:.4f}  "
                f"val {val_loss:.4f}  val_acc {val_acc:.4f}")

        if val_loss < best_val:
            best_val = val_loss
            history.best_epoch = epoch
            for saved, p in zip(best_state, params):
                saved[...] = p.tensor.data
        elif epoch - history.best_epoch >= config.early_stop_patience:
            break

    for saved, p in zip(best_state, params):
        p.tensor.data[...] = saved
    history.seconds = time.monotonic() - started
    return model, history
