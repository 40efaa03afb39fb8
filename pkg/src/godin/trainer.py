"""Cross-entropy training with SGD momentum and a step learning-rate schedule."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numgrad as ng
from .model import Model
from .netcore import he_init  # noqa: F401  re-exported
from .numgrad import Tensor

log = logging.getLogger(__name__)

# head class centroids are never decayed
NO_DECAY_TAGS = frozenset({"class_weight", "class_bias"})


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 200
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_drop_points: list[float] = field(default_factory=lambda: [0.5, 0.75])
    decay_divisor: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        self.lr_drop_points = [float(p) for p in self.lr_drop_points]
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if any(not 0.0 < p < 1.0 for p in self.lr_drop_points):
            raise ValueError("lr drop points must lie strictly inside (0, 1)")
        if not 0.0 <= self.momentum < 1.0 or self.weight_decay < 0:
            raise ValueError("momentum must lie in [0, 1) and weight_decay be >= 0")


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)

    def to_csv(self, path, header: str | None = None) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "loss", "train_acc", "val_acc"])
            for i, row in enumerate(zip(self.loss, self.train_acc, self.val_acc)):
                writer.writerow([i, *(repr(v) for v in row)])
        return path


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax probability of the true class."""
    labels = np.asarray(labels)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ng.ShapeError(f"expected {b} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    onehot = np.zeros((b, c))
    onehot[np.arange(b), labels.astype(int)] = 1.0
    return -(ng.log_softmax(logits, axis=1) * onehot).sum() / b


def drop_epochs(config: TrainConfig) -> list[int]:
    # never drop before the first epoch, even for very short runs
    return [max(1, int(math.floor(p * config.epochs))) for p in config.lr_drop_points]


def learning_rate(config: TrainConfig, epoch: int) -> float:
    drops = sum(1 for d in drop_epochs(config) if epoch >= d)
    return config.lr0 * 0.1**drops


def decayed(tag: str, config: TrainConfig) -> bool:
    if tag in NO_DECAY_TAGS:
        return False
    if tag == "divisor" and not config.decay_divisor:
        return False
    return True


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient."""

    def __init__(self, named_params: list[tuple[str, Tensor, str]], config: TrainConfig):
        self.params = named_params
        self.config = config
        self.buffers: dict[str, np.ndarray] = {}

    @property
    def decayed_names(self) -> set[str]:
        return {name for name, _, tag in self.params if decayed(tag, self.config)}

    def step(self, grads: list[Tensor], epoch: int) -> None:
        sgd_step(self.params, grads, self.config, epoch, self.buffers)


def sgd_step(
    params: list[tuple[str, Tensor, str]],
    grads: list[Tensor],
    config: TrainConfig,
    epoch: int,
    buffers: dict[str, np.ndarray] | None = None,
) -> None:
    """Update ``params`` in place: ``v = grad + wd*p``, ``buf = m*buf + v``, ``p -= lr*buf``."""
    if len(params) != len(grads):
        raise ValueError("one gradient per parameter required")
    buffers = {} if buffers is None else buffers
    lr = learning_rate(config, epoch)
    for (name, p, tag), g in zip(params, grads):
        v = g.data
        if config.weight_decay and decayed(tag, config):
            v = v + config.weight_decay * p.data
        if config.momentum:
            buf = buffers.get(name)
            buf = v if buf is None else config.momentum * buf + v
            buffers[name] = buf
            v = buf
        p.data = p.data - lr * v


def accuracy(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    if len(x) == 0:
        return float("nan")
    return float(np.mean(model.predict(x) == y))


def train(
    model: Model,
    x: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    val: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[Model, TrainHistory]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y).astype(int)
    if len(x) == 0:
        raise ValueError("cannot train on an empty dataset")
    params = model.named_parameters()
    tensors = [t for _, t, _ in params]
    opt = SGD(params, config)
    history = TrainHistory()
    n = len(x)

    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 21, epoch]).permutation(n)
        drop_rng = np.random.default_rng([config.seed, 22, epoch])
        total, correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            try:
                # overflow is reported by NonFiniteError, not by numpy warnings
                with ng.tape(), np.errstate(over="ignore", invalid="ignore"):
                    out = model(x[idx], "train", drop_rng)
                    loss = cross_entropy(out.logits, y[idx])
                    grads = ng.grad(loss, tensors)
            except ng.NonFiniteError as exc:
                raise TrainingDiverged(
                    f"epoch {epoch}, batch starting at {start}: {exc}"
                ) from exc
            opt.step(grads, epoch)
            total += loss.item() * len(idx)
            correct += int(np.sum(np.argmax(out.logits.data, axis=1) == y[idx]))
        history.loss.append(total / n)
        history.train_acc.append(correct / n)
        history.val_acc.append(accuracy(model, *val) if val is not None else float("nan"))
        log.debug("epoch %d loss %.4f acc %.4f", epoch, history.loss[-1], history.train_acc[-1])
    return model, history
