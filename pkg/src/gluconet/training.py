"""Mini-batch Adam training loop shared by every network."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .engine import AdamState, adam_step, clip_grad_norm, mse_loss
from .models import Model

logger = logging.getLogger(__name__)

LossFn = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 64
    clip_norm: float | None = 1.0
    seed: int = 0


@dataclass
class History:
    losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_state: dict[str, np.ndarray] | None = None

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def fit(model: Model, inputs, targets, config: TrainConfig, loss_fn: LossFn | None = None) -> History:
    """Train ``model`` in place.

    ``loss_fn(pred, batch_index)`` returns ``(loss, dloss/dpred)``; the
    default is MSE against ``targets[batch_index]``. Batches are drawn from
    a permutation seeded by ``config.seed``, so runs are repeatable.
    Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    inputs = np.asarray(inputs, dtype=model.dtype)
    targets = np.asarray(targets, dtype=model.dtype)
    if len(inputs) != len(targets):
        raise ValueError("inputs and targets differ in length")
    if len(inputs) == 0:
        raise ValueError("no training windows")
    if loss_fn is None:
        def loss_fn(pred, idx):
            return mse_loss(pred, targets[idx])

    rng = np.random.default_rng(config.seed)
    opt = AdamState(lr=config.lr)
    hist = History()
    n = len(inputs)
    best = np.inf
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            model.store.zero_grad()
            pred = model.forward(inputs[idx])
            loss, dpred = loss_fn(pred, idx)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"{model.kind}: non-finite loss at epoch {epoch}")
            model.backward(dpred.astype(model.dtype, copy=False))
            if config.clip_norm is not None:
                clip_grad_norm(model.store, config.clip_norm)
            adam_step(model.store, opt)
            total += loss * len(idx)
        epoch_loss = total / n
        hist.losses.append(epoch_loss)
        if epoch_loss < best:
            best = epoch_loss
            hist.best_epoch = epoch
            hist.best_state = model.store.state_dict()
        logger.debug("%s epoch %d loss %.6g", model.kind, epoch, epoch_loss)
    return hist
