"""Functional layer primitives with hand-written backward passes.

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward(dout, cache)`` returns the input gradient followed by the
parameter gradients in argument order.
"""
from __future__ import annotations

import numpy as np


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def _arr(x):
    x = np.asarray(x)
    return x if x.dtype in (np.float32, np.float64) else x.astype(np.float64)


# -- dense -----------------------------------------------------------------

def linear_forward(x, W, b):
    x = _arr(x)
    _check(W.ndim == 2 and x.shape[-1] == W.shape[0], f"linear: x {x.shape} vs W {W.shape}")
    _check(b.shape == (W.shape[1],), f"linear: b {b.shape} vs W {W.shape}")
    return x @ W + b, (x, W)


def linear_backward(dy, cache):
    x, W = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dx = (dy2 @ W.T).reshape(x.shape)
    return dx, x2.T @ dy2, dy2.sum(axis=0)


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


# -- convolution -----------------------------------------------------------

def conv1d_forward(x, w, b=None):
    """Valid cross-correlation, stride 1. ``x`` is ``[B, C_in, L]``,
    ``w`` is ``[C_out, C_in, K]``; output ``[B, C_out, L - K + 1]``."""
    x = _arr(x)
    _check(x.ndim == 3 and w.ndim == 3, "conv1d: expected 3-D input and kernels")
    B, C, L = x.shape
    Co, Ci, K = w.shape
    _check(C == Ci, f"conv1d: input has {C} channels, kernels expect {Ci}")
    _check(L >= K, f"conv1d: length {L} shorter than kernel {K}")
    if b is not None:
        _check(b.shape == (Co,), f"conv1d: bias {b.shape} vs {Co} outputs")
    Lo = L - K + 1
    xt = x.transpose(0, 2, 1)  # B,L,C
    cols = np.concatenate([xt[:, j : j + Lo] for j in range(K)], axis=-1).reshape(B * Lo, K * C)
    w2 = w.transpose(0, 2, 1).reshape(Co, K * C)
    y = cols @ w2.T
    if b is not None:
        y += b
    return y.reshape(B, Lo, Co).transpose(0, 2, 1), (cols, w2, w.shape, x.shape, b is not None)


def conv1d_backward(dy, cache):
    cols, w2, wshape, xshape, has_bias = cache
    B, C, L = xshape
    Co, _, K = wshape
    Lo = L - K + 1
    dy2 = dy.transpose(0, 2, 1).reshape(B * Lo, Co)
    dw = (dy2.T @ cols).reshape(Co, K, C).transpose(0, 2, 1)
    dcols = (dy2 @ w2).reshape(B, Lo, K, C)
    dxt = np.zeros((B, L, C), dtype=dy.dtype)
    for j in range(K):
        dxt[:, j : j + Lo] += dcols[:, :, j]
    db = dy2.sum(axis=0) if has_bias else None
    return dxt.transpose(0, 2, 1), dw, db


# -- recurrence ------------------------------------------------------------

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_forward(x, Wx, Wh, b):
    """One LSTM layer over ``x [B, T, in]`` from a zero state.

    Gate blocks in the fused weights are ordered input, forget, cell, output.
    Returns the hidden sequence ``[B, T, H]``.
    """
    x = _arr(x)
    _check(x.ndim == 3, "lstm: expected [B, T, in]")
    B, T, D = x.shape
    _check(T >= 1, "lstm: empty sequence")
    H = Wh.shape[0]
    _check(Wx.shape == (D, 4 * H), f"lstm: Wx {Wx.shape} expected {(D, 4 * H)}")
    _check(Wh.shape == (H, 4 * H) and b.shape == (4 * H,), "lstm: recurrent weight/bias shape")
    xproj = (x.transpose(1, 0, 2).reshape(T * B, D) @ Wx + b).reshape(T, B, 4 * H)
    # time-major storage keeps every per-step slice contiguous
    hs = np.zeros((T + 1, B, H), dtype=xproj.dtype)
    cs = np.zeros((T + 1, B, H), dtype=xproj.dtype)
    gates = np.empty((T, B, 4 * H), dtype=xproj.dtype)
    for t in range(T):
        z = xproj[t] + hs[t] @ Wh
        gt = gates[t]
        gt[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
        gt[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        gt[:, 3 * H :] = _sigmoid(z[:, 3 * H :])
        cs[t + 1] = gt[:, H : 2 * H] * cs[t] + gt[:, :H] * gt[:, 2 * H : 3 * H]
        hs[t + 1] = gt[:, 3 * H :] * np.tanh(cs[t + 1])
    return hs[1:].transpose(1, 0, 2).copy(), (x, Wx, Wh, hs, cs, gates)


def lstm_backward(dh_seq, cache):
    x, Wx, Wh, hs, cs, gates = cache
    B, T, D = x.shape
    H = Wh.shape[0]
    dh_tm = dh_seq.transpose(1, 0, 2)
    dz = np.empty((T, B, 4 * H), dtype=dh_seq.dtype)
    dh_next = np.zeros((B, H), dtype=dh_seq.dtype)
    dc_next = np.zeros((B, H), dtype=dh_seq.dtype)
    WhT = np.ascontiguousarray(Wh.T)
    for t in reversed(range(T)):
        gt = gates[t]
        i, f, g, o = (gt[:, k * H : (k + 1) * H] for k in range(4))
        tc = np.tanh(cs[t + 1])
        dh = dh_tm[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc**2)
        d = dz[t]
        d[:, :H] = dc * g * i * (1.0 - i)
        d[:, H : 2 * H] = dc * cs[t] * f * (1.0 - f)
        d[:, 2 * H : 3 * H] = dc * i * (1.0 - g**2)
        d[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dh_next = d @ WhT
        dc_next = dc * f
    dz2 = dz.reshape(T * B, 4 * H)
    dx = (dz2 @ Wx.T).reshape(T, B, D).transpose(1, 0, 2)
    dWx = x.transpose(1, 0, 2).reshape(T * B, D).T @ dz2
    dWh = hs[:-1].reshape(T * B, H).T @ dz2
    db = dz2.sum(axis=0)
    return dx, dWx, dWh, db


# -- normalization and attention ------------------------------------------

def layernorm_forward(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layernorm_backward(dy, cache):
    xhat, inv, gamma = cache
    n = xhat.shape[-1]
    dgamma = (dy * xhat).reshape(-1, n).sum(axis=0)
    dbeta = dy.reshape(-1, n).sum(axis=0)
    dxhat = dy * gamma
    dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def softmax(z, axis=-1):
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    e /= e.sum(axis=axis, keepdims=True)
    return e


def _softmax_inplace(z):
    """Last-axis softmax that overwrites ``z`` (a fresh temporary)."""
    z -= z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def attention_forward(x, Wq, bq, Wk, bk, Wv, bv, Wo, bo, heads):
    """Multi-head scaled dot-product self-attention over ``x [B, T, d]``."""
    x = _arr(x)
    _check(x.ndim == 3, "attention: expected [B, T, d]")
    B, T, d = x.shape
    _check(d % heads == 0, f"attention: d={d} not divisible by heads={heads}")
    dh = d // heads
    _check(Wq.shape == Wk.shape == Wv.shape == (d, d), "attention: projection shapes differ from (d, d)")
    # one fused projection instead of three
    qkv, cqkv = linear_forward(x, np.concatenate([Wq, Wk, Wv], axis=1), np.concatenate([bq, bk, bv]))
    Q, K, V = qkv.reshape(B, T, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    scale = 1.0 / float(np.sqrt(dh))
    A = _softmax_inplace((Q * scale) @ K.transpose(0, 1, 3, 2))
    ctx = (A @ V).transpose(0, 2, 1, 3).reshape(B, T, d)
    y, co = linear_forward(ctx, Wo, bo)
    return y, (cqkv, co, Q, K, V, A, scale, heads)


def attention_backward(dy, cache):
    cqkv, co, Q, K, V, A, scale, heads = cache
    B, H, T, dh = Q.shape
    dctx, dWo, dbo = linear_backward(dy, co)
    dC = dctx.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
    dA = dC @ V.transpose(0, 1, 3, 2)
    dV = A.transpose(0, 1, 3, 2) @ dC
    # softmax backward in place on the fresh dA buffer
    dA -= (dA * A).sum(axis=-1, keepdims=True)
    dA *= A
    d = H * dh
    # write dQ, dK, dV straight into the fused [B, T, 3, H, dh] layout
    dqkv = np.empty((B, T, 3, H, dh), dtype=dV.dtype)
    dq, dk, dv = dqkv.transpose(2, 0, 3, 1, 4)
    np.matmul(dA, K, out=dq)
    dq *= scale
    np.matmul(dA.transpose(0, 1, 3, 2), Q, out=dk)
    dk *= scale
    dv[...] = dV
    dqkv = dqkv.reshape(B, T, 3 * d)
    dx, dW, db = linear_backward(dqkv, cqkv)
    return (dx, dW[:, :d], db[:d], dW[:, d:2 * d], db[d:2 * d],
            dW[:, 2 * d:], db[2 * d:], dWo, dbo)


def positional_encoding(T: int, d: int) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd ones."""
    if T < 1 or d < 1:
        raise ValueError("T and d must be positive")
    pos = np.arange(T, dtype=float)[:, None]
    i = np.arange(0, d, 2, dtype=float)
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((T, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


# -- losses ----------------------------------------------------------------

def tempered_softmax(z, tau: float):
    """Softmax of ``z / tau`` along the last axis."""
    if not tau > 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return softmax(z / tau, axis=-1)


def tempered_softmax_backward(dp, p, tau: float):
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True)) / tau


def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = _arr(pred)
    target = np.asarray(target, dtype=pred.dtype)
    _check(pred.shape == target.shape, f"mse: shape {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size
