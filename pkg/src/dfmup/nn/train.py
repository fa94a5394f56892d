"""Mini-batch training loop with best-validation checkpointing."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import ParameterError
from .model import Network
from .optim import Adam, PlateauScheduler

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.0025
    batch: int = 64
    epochs: int = 125
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    keep: str = "best"          # "best": lowest validation loss; "last": final epoch

    def __post_init__(self):
        if self.keep not in ("best", "last"):
            raise ParameterError("keep must be 'best' or 'last'")
        if not self.lr0 > 0:
            raise ParameterError("lr0 must be positive")
        if self.batch < 1 or self.epochs < 1:
            raise ParameterError("batch and epochs must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ParameterError(f"invalid training config: {exc}") from exc


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    model: Network
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    initial_loss: float = float("nan")

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "val_mse", "lr"])
            for r in self.history:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.lr)])


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    chunks = [order[i:i + size] for i in range(0, len(order), size)]
    # batch norm needs two samples per batch: fold a trailing singleton into the previous batch
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def evaluate(model: Network, x, y, batch: int = 64) -> float:
    pred = model.predict(x, batch)
    diff = pred - np.asarray(y, dtype=pred.dtype)
    return float((diff * diff).mean())


def train(model: Network, train_set, val_set, tc: TrainConfig = TrainConfig(),
          callback: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Train on (inputs, targets) pairs; returns a copy of the weights with lowest validation loss."""
    x_tr, y_tr = (np.asarray(a) for a in train_set)
    x_va, y_va = (np.asarray(a) for a in val_set)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ParameterError("training and validation splits must be non-empty")
    if len(x_tr) < 2:
        raise ParameterError("training needs at least two samples (batch norm)")
    if len(x_tr) != len(y_tr) or len(x_va) != len(y_va):
        raise ParameterError("inputs and targets differ in length")
    net = model.copy()
    rng = np.random.default_rng(tc.seed)
    opt = Adam(tc.beta1, tc.beta2, tc.eps)
    state = opt.init(net.params)
    sched = PlateauScheduler(tc.lr0, tc.plateau_factor, tc.plateau_patience)
    result = TrainResult(net.copy())
    lr = tc.lr0
    for epoch in range(1, tc.epochs + 1):
        order = rng.permutation(len(x_tr))
        total, count = 0.0, 0
        for idx in _batches(order, tc.batch):
            loss, grads = net.loss_and_grad(x_tr[idx], y_tr[idx])
            if np.isnan(result.initial_loss):
                result.initial_loss = loss
            opt.step(net.params, grads, state, lr)
            total += loss * len(idx)
            count += len(idx)
        val = evaluate(net, x_va, y_va, tc.batch)
        rec = EpochRecord(epoch, total / count, val, lr)
        result.history.append(rec)
        if val < result.best_val_loss:
            result.best_val_loss = val
            result.best_epoch = epoch
            result.model = net.copy()
        if tc.keep == "last" and epoch == tc.epochs:
            result.model = net.copy()
        lr = sched.step(val)
        log.debug("epoch %d train %.4e val %.4e lr %.2e", epoch, rec.train_loss, val, rec.lr)
        if callback is not None:
            callback(rec)
    return result
