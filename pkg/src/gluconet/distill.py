"""Teacher-to-student knowledge distillation for multi-output regression."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import mse_loss, tempered_softmax, tempered_softmax_backward
from .models import TransformerConfig, TransformerModel, build_transformer
from .training import History, TrainConfig, fit


@dataclass(frozen=True)
class KdConfig:
    """``softening="identity"`` compares raw outputs and lets the
    temperature act only through the ``tau**2`` weight;
    ``"tempered_softmax"`` softens both output vectors first."""

    alpha: float = 0.5
    tau: float = 2.0
    epochs: int = 500
    softening: str = "identity"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.softening not in ("identity", "tempered_softmax"):
            raise ValueError(f"unknown softening {self.softening!r}")


def kd_loss(student_out, teacher_out, target, config: KdConfig):
    """``(1 - alpha) * MSE(y, S) + alpha * tau^2 * MSE(soft(T), soft(S))``.

    Returns the loss and its gradient with respect to ``student_out``; the
    teacher output is a constant.
    """
    s = np.asarray(student_out)
    t = np.asarray(teacher_out, dtype=s.dtype)
    y = np.asarray(target, dtype=s.dtype)
    if not (s.shape == t.shape == y.shape):
        raise ValueError(f"shape mismatch: student {s.shape}, teacher {t.shape}, target {y.shape}")
    a, tau = config.alpha, config.tau
    hard, d_hard = mse_loss(s, y)
    if config.softening == "identity":
        soft, d_soft = mse_loss(s, t)
    else:
        ps = tempered_softmax(s, tau)
        soft, dps = mse_loss(ps, tempered_softmax(t, tau))
        d_soft = tempered_softmax_backward(dps, ps, tau)
    w = a * tau * tau
    return (1.0 - a) * hard + w * soft, (1.0 - a) * d_hard + w * d_soft


def distill_train(
    teacher: TransformerModel,
    student_config: TransformerConfig,
    inputs,
    targets,
    kd: KdConfig = KdConfig(),
    train: TrainConfig | None = None,
    dtype=None,
) -> tuple[TransformerModel, History]:
    """Train a fresh student against ``targets`` and the frozen teacher's
    outputs on the same windows. The teacher is only run forward."""
    if teacher.horizon != student_config.horizon:
        raise ValueError(f"teacher horizon {teacher.horizon} != student horizon {student_config.horizon}")
    train = train or TrainConfig(epochs=kd.epochs)
    student = build_transformer(student_config, seed=train.seed, dtype=dtype or teacher.dtype)
    soft_targets = teacher.predict(inputs)
    targets = np.asarray(targets, dtype=student.dtype)

    def loss_fn(pred, idx):
        return kd_loss(pred, soft_targets[idx], targets[idx], kd)

    hist = fit(student, inputs, targets, train, loss_fn=loss_fn)
    return student, hist
