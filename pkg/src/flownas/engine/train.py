"""Mini-batch Adam training with plateau LR decay and early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..arch import Architecture
from ..dataset import Dataset, holdout_split
from ..errors import DivergedLoss, EmptyDataset, NonFiniteActivation, ShapeMismatch
from . import layers as L
from .metrics import Metrics, classification_metrics
from .network import (Weights, forward, init_weights, loss_and_grad,
                      update_running_stats)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 128
    initial_lr: float = 1e-3
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    min_lr: float = 1e-5
    early_stop_patience: int = 10
    multi_start: int = 3
    seed: int = 0
    val_fraction: float = 0.2
    time_budget: Optional[float] = None  # seconds per run
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("max_epochs", "batch_size", "plateau_patience",
                     "early_stop_patience", "multi_start"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-7):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, weights: Weights, grads: Weights) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            weights[name] -= (self.lr * corr * m / (np.sqrt(v) + self.eps)).astype(g.dtype)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class TrainResult:
    weights: Weights
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    val_loss: float = float("inf")
    val_acc: float = 0.0
    seconds: float = 0.0
    run_index: int = 0
    stopped_early: bool = False


def predict_logits(arch: Architecture, weights: Weights, x: np.ndarray,
                   batch_size: int = 256) -> np.ndarray:
    chunks = [forward(arch, weights, x[s : s + batch_size]).logits
              for s in range(0, len(x), batch_size)]
    return np.concatenate(chunks) if chunks else np.zeros((0, arch.n_classes))


def loss_and_accuracy(arch: Architecture, weights: Weights, ds: Dataset) -> tuple[float, float]:
    """Eval-mode mean cross-entropy and accuracy."""
    dtype = weights["dense.w"].dtype
    logits = predict_logits(arch, weights, ds.scaled(dtype))
    loss, _ = L.softmax_xent(logits.astype(np.float64), ds.y)
    return loss, float((logits.argmax(axis=1) == ds.y).mean())


def evaluate(arch: Architecture, weights: Weights, ds: Dataset) -> Metrics:
    dtype = weights["dense.w"].dtype
    pred = predict_logits(arch, weights, ds.scaled(dtype)).argmax(axis=1)
    return classification_metrics(ds.y, pred, arch.n_classes)


def _copy(weights: Weights) -> Weights:
    return {k: v.copy() for k, v in weights.items()}


def train(
    arch: Architecture,
    train_set: Dataset,
    val_set: Optional[Dataset],
    cfg: TrainConfig,
    run_index: int = 0,
) -> TrainResult:
    """Train from a fresh seeded init; returns the best-validation-loss weights.

    When ``val_set`` is None a holdout of ``cfg.val_fraction`` is split off
    ``train_set``. Run ``i`` of a multi-start draws from seed ``(cfg.seed, i)``.
    """
    if val_set is None:
        train_set, val_set = holdout_split(train_set, cfg.val_fraction, cfg.seed)
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    if train_set.input_len != arch.input_len:
        raise ShapeMismatch(
            f"dataset input_len {train_set.input_len} != architecture {arch.input_len}"
        )

    rng = np.random.default_rng([cfg.seed, run_index])
    dtype = np.dtype(cfg.dtype)
    weights = init_weights(arch, rng, dtype)
    opt = Adam(cfg.initial_lr)
    x_train = train_set.scaled(dtype)
    y_train = train_set.y

    result = TrainResult(weights=_copy(weights), run_index=run_index)
    start = time.perf_counter()
    plateau_wait = stop_wait = 0
    best_plateau = float("inf")

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_set))
        seen = correct = 0
        total_loss = 0.0
        try:
            for s in range(0, len(order), cfg.batch_size):
                idx = order[s : s + cfg.batch_size]
                loss, grads, res = loss_and_grad(arch, weights, x_train[idx], y_train[idx], rng)
                if not np.isfinite(loss):
                    raise DivergedLoss(f"epoch {epoch}: non-finite training loss")
                opt.step(weights, grads)
                update_running_stats(weights, res.bn_stats)
                total_loss += loss * len(idx)
                correct += int((res.logits.argmax(axis=1) == y_train[idx]).sum())
                seen += len(idx)
            val_loss, val_acc = loss_and_accuracy(arch, weights, val_set)
        except NonFiniteActivation as exc:
            raise DivergedLoss(f"epoch {epoch}: {exc}") from exc
        if not np.isfinite(val_loss):
            raise DivergedLoss(f"epoch {epoch}: non-finite validation loss")

        result.history.append(EpochRecord(epoch, total_loss / seen, correct / seen,
                                          val_loss, val_acc, opt.lr))
        log.debug("epoch %d loss %.4f val_loss %.4f val_acc %.4f lr %.2e",
                  epoch, total_loss / seen, val_loss, val_acc, opt.lr)

        if val_loss < result.val_loss:
            result.val_loss, result.val_acc, result.best_epoch = val_loss, val_acc, epoch
            result.weights = _copy(weights)
            stop_wait = 0
        else:
            stop_wait += 1

        if val_loss < best_plateau:
            best_plateau, plateau_wait = val_loss, 0
        else:
            plateau_wait += 1
            if plateau_wait >= cfg.plateau_patience and opt.lr > cfg.min_lr:
                opt.lr = max(opt.lr * cfg.plateau_factor, cfg.min_lr)
                plateau_wait = 0

        if stop_wait >= cfg.early_stop_patience:
            result.stopped_early = True
            break
        if cfg.time_budget is not None and time.perf_counter() - start > cfg.time_budget:
            break

    result.seconds = time.perf_counter() - start
    return result


Trainer = Callable[[Architecture, Dataset, Dataset, TrainConfig, int], TrainResult]


def multi_start_train(
    arch: Architecture,
    train_set: Dataset,
    val_set: Optional[Dataset],
    cfg: TrainConfig,
    trainer: Trainer = train,
) -> TrainResult:
    """Best of ``cfg.multi_start`` seeded runs.

    Ranked by validation accuracy, then lower validation loss, then lower
    run index.
    """
    if val_set is None:
        train_set, val_set = holdout_split(train_set, cfg.val_fraction, cfg.seed)
    runs = [trainer(arch, train_set, val_set, cfg, i) for i in range(cfg.multi_start)]
    best = min(runs, key=lambda r: (-r.val_acc, r.val_loss, r.run_index))
    best.seconds = sum(r.seconds for r in runs)
    return best
