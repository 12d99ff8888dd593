from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ParamStore


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(store: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update, in the store's iteration order."""
    for name, t in store.items():
        if t.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for name, t in store.items():
        m = state.m.setdefault(name, np.zeros_like(t.values))
        v = state.v.setdefault(name, np.zeros_like(t.values))
        g = t.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        t.values -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grad_norm(store: ParamStore, max_norm: float = 1.0) -> float:
    """Rescale all gradients so their global L2 norm is at most ``max_norm``.
    Returns the norm before clipping."""
    total = float(np.sqrt(sum(float(np.sum(t.grad**2)) for _, t in store.items() if t.grad is not None)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for _, t in store.items():
            if t.grad is not None:
                t.grad *= scale
    return total
