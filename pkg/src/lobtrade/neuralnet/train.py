"""Training loop: adaptive moment optimizer, epoch shuffling, best-epoch
weight selection on validation loss.  Deterministic for a fixed seed via
named PRNG substreams ("init", "shuffle", "dropout")."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..lobdata import FeatureWindow
from ..rng import CounterRng
from .model import (
    ModelConfig,
    Weights,
    dropout_masks,
    init_weights,
    label_to_class,
    loss_and_grad,
    predict_proba,
)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"  # "adam" or "sgd"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer '{self.kind}'")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainResult:
    weights: Weights
    history: list[EpochStats]
    best_epoch: int  # -1 when no epoch ran


class _Adam:
    def __init__(self, cfg: OptimizerConfig, w: Weights):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in w.items()}
        self.v = {k: np.zeros_like(v) for k, v in w.items()}
        self.t = 0

    def step(self, w: Weights, grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        b1t = 1.0 - c.beta1**self.t
        b2t = 1.0 - c.beta2**self.t
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            w[k] = w[k] - c.lr * (self.m[k] / b1t) / (np.sqrt(self.v[k] / b2t) + c.eps)


class _Sgd:
    def __init__(self, cfg: OptimizerConfig, w: Weights):
        self.cfg = cfg

    def step(self, w: Weights, grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            w[k] = w[k] - self.cfg.lr * g


def windows_to_arrays(windows: Sequence[FeatureWindow]) -> tuple[np.ndarray, np.ndarray]:
    """Stack windows into (X, y) with y as class indices."""
    X = np.stack([win.values for win in windows])
    y = np.array([label_to_class(win.label) for win in windows], dtype=np.int64)
    return X, y


def evaluate_loss(
    cfg: ModelConfig, w: Weights, X: np.ndarray, y: np.ndarray, batch_size: int = 256
) -> tuple[float, float]:
    """Deterministic mean cross-entropy and accuracy."""
    probs = predict_proba(cfg, w, X, batch_size)
    logp = np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None))
    acc = float(np.mean(np.argmax(probs, axis=1) == y))
    return float(-np.mean(logp)), acc


def train(
    model_cfg: ModelConfig,
    train_windows: Sequence[FeatureWindow],
    val_windows: Sequence[FeatureWindow],
    train_cfg: TrainConfig,
    seed: int,
) -> TrainResult:
    """Train and return the weights of the best validation-loss epoch.

    With 0 epochs the freshly initialized weights come back untouched.
    Raises DivergenceError (with epoch/batch) on a non-finite loss.
    """
    if not train_windows:
        raise ValueError("empty training data")
    if not val_windows:
        raise ValueError("validation split required")
    train_cfg.optimizer.validate()
    model_cfg.validate()

    w = init_weights(model_cfg, CounterRng.from_seed(seed, "init"))
    if train_cfg.epochs == 0:
        return TrainResult(weights=w, history=[], best_epoch=-1)

    X_train, y_train = windows_to_arrays(train_windows)
    X_val, y_val = windows_to_arrays(val_windows)
    n = len(X_train)
    bs = min(train_cfg.batch_size, n)

    opt = _Adam(train_cfg.optimizer, w) if train_cfg.optimizer.kind == "adam" else _Sgd(
        train_cfg.optimizer, w
    )
    use_dropout = model_cfg.dropout_rate > 0.0

    best_loss = np.inf
    best_w = w.copy()
    best_epoch = -1
    history: list[EpochStats] = []
    for epoch in range(train_cfg.epochs):
        perm = CounterRng.from_seed(seed, "shuffle", epoch).permutation(n)
        losses = []
        for bi, start in enumerate(range(0, n, bs)):
            idx = perm[start : start + bs]
            masks = None
            if use_dropout:
                rng = CounterRng.from_seed(seed, "dropout", epoch, bi)
                masks = dropout_masks(model_cfg, rng, len(idx))
            try:
                loss, grads = loss_and_grad(model_cfg, w, X_train[idx], y_train[idx], masks)
            except FloatingPointError as exc:
                raise DivergenceError(f"epoch {epoch}, batch {bi}: {exc}") from exc
            losses.append(loss * len(idx))
            opt.step(w, grads)
        # train accuracy from a deterministic pass over the epoch's data
        _, train_acc = evaluate_loss(model_cfg, w, X_train, y_train)
        val_loss, val_acc = evaluate_loss(model_cfg, w, X_val, y_val)
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=float(np.sum(losses) / n),
                train_accuracy=train_acc,
                val_loss=val_loss,
                val_accuracy=val_acc,
            )
        )
        if val_loss < best_loss:
            best_loss = val_loss
            best_w = w.copy()
            best_epoch = epoch
    return TrainResult(weights=best_w, history=history, best_epoch=best_epoch)
