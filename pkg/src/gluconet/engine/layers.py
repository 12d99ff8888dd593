"""Stateful layer wrappers over :mod:`ops` that own entries in a ParamStore."""
from __future__ import annotations

import numpy as np

from . import ops
from .tensor import ParamStore


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base class: ``forward`` caches what ``backward`` needs."""

    def __init__(self, store: ParamStore, name: str):
        self.store = store
        self.name = name
        self.param_names: list[str] = []
        self._cache = None

    def _add(self, suffix: str, values: np.ndarray):
        key = f"{self.name}.{suffix}"
        self.param_names.append(key)
        return self.store.add(key, values)

    def n_params(self) -> int:
        return sum(self.store[k].size for k in self.param_names)

    def __call__(self, x):
        return self.forward(x)


class Linear(Layer):
    def __init__(self, store, name, n_in, n_out, rng):
        super().__init__(store, name)
        self.W = self._add("W", _uniform(rng, (n_in, n_out), n_in))
        self.b = self._add("b", _uniform(rng, (n_out,), n_in))

    def forward(self, x):
        y, self._cache = ops.linear_forward(x, self.W.values, self.b.values)
        return y

    def backward(self, dy):
        dx, dW, db = ops.linear_backward(dy, self._cache)
        self.W.accumulate(dW)
        self.b.accumulate(db)
        return dx


class ReLU:
    n_params = staticmethod(lambda: 0)

    def forward(self, x):
        y, self._mask = ops.relu_forward(x)
        return y

    def backward(self, dy):
        return ops.relu_backward(dy, self._mask)

    __call__ = forward


class Conv1d(Layer):
    """Channels-last wrapper: takes and returns ``[B, L, C]``."""

    def __init__(self, store, name, c_in, c_out, rng, kernel_size=3):
        super().__init__(store, name)
        fan_in = c_in * kernel_size
        self.w = self._add("w", _uniform(rng, (c_out, c_in, kernel_size), fan_in))
        self.b = self._add("b", _uniform(rng, (c_out,), fan_in))

    def forward(self, x):
        y, self._cache = ops.conv1d_forward(x.transpose(0, 2, 1), self.w.values, self.b.values)
        return y.transpose(0, 2, 1)

    def backward(self, dy):
        dx, dw, db = ops.conv1d_backward(dy.transpose(0, 2, 1), self._cache)
        self.w.accumulate(dw)
        self.b.accumulate(db)
        return dx.transpose(0, 2, 1)


class LSTM(Layer):
    def __init__(self, store, name, n_in, hidden, rng):
        super().__init__(store, name)
        self.hidden = hidden
        self.Wx = self._add("Wx", _uniform(rng, (n_in, 4 * hidden), hidden))
        self.Wh = self._add("Wh", _uniform(rng, (hidden, 4 * hidden), hidden))
        self.b = self._add("b", _uniform(rng, (4 * hidden,), hidden))

    def forward(self, x):
        y, self._cache = ops.lstm_forward(x, self.Wx.values, self.Wh.values, self.b.values)
        return y

    def backward(self, dy):
        dx, dWx, dWh, db = ops.lstm_backward(dy, self._cache)
        self.Wx.accumulate(dWx)
        self.Wh.accumulate(dWh)
        self.b.accumulate(db)
        return dx


class LayerNorm(Layer):
    def __init__(self, store, name, dim):
        super().__init__(store, name)
        self.gamma = self._add("gamma", np.ones(dim))
        self.beta = self._add("beta", np.zeros(dim))

    def forward(self, x):
        y, self._cache = ops.layernorm_forward(x, self.gamma.values, self.beta.values)
        return y

    def backward(self, dy):
        dx, dg, db = ops.layernorm_backward(dy, self._cache)
        self.gamma.accumulate(dg)
        self.beta.accumulate(db)
        return dx


class MultiHeadAttention(Layer):
    def __init__(self, store, name, d_model, heads, rng):
        if d_model % heads:
            raise ValueError(f"d_model={d_model} not divisible by heads={heads}")
        super().__init__(store, name)
        self.heads = heads
        self.proj = []
        for p in "qkvo":
            W = self._add(f"W{p}", _uniform(rng, (d_model, d_model), d_model))
            b = self._add(f"b{p}", _uniform(rng, (d_model,), d_model))
            self.proj += [W, b]
        self.last_weights = None

    def forward(self, x):
        y, self._cache = ops.attention_forward(x, *(t.values for t in self.proj), heads=self.heads)
        self.last_weights = self._cache[5]
        return y

    def backward(self, dy):
        dx, *grads = ops.attention_backward(dy, self._cache)
        for t, g in zip(self.proj, grads):
            t.accumulate(g)
        return dx
