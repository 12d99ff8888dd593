"""Minimal numpy training engine: layers with analytic gradients, MSE, Adam."""
from .gradcheck import grad_check
from .layers import LSTM, Conv1d, Layer, LayerNorm, Linear, MultiHeadAttention, ReLU
from .ops import (
    attention_backward,
    attention_forward,
    conv1d_backward,
    conv1d_forward,
    layernorm_backward,
    layernorm_forward,
    linear_backward,
    linear_forward,
    lstm_backward,
    lstm_forward,
    mse_loss,
    positional_encoding,
    tempered_softmax,
    tempered_softmax_backward,
)
from .optim import AdamState, adam_step, clip_grad_norm
from .tensor import ParamStore, Tensor, load_checkpoint, save_checkpoint

__all__ = [
    "AdamState", "Conv1d", "LSTM", "Layer", "LayerNorm", "Linear", "MultiHeadAttention",
    "ParamStore", "ReLU", "Tensor", "adam_step", "attention_backward", "attention_forward",
    "clip_grad_norm", "conv1d_backward", "conv1d_forward", "grad_check", "layernorm_backward",
    "layernorm_forward", "linear_backward", "linear_forward", "load_checkpoint",
    "lstm_backward", "lstm_forward", "mse_loss", "positional_encoding", "save_checkpoint",
    "tempered_softmax", "tempered_softmax_backward",
]
