"""The low-frequency CNN-LSTM, the encoder-only transformer (teacher and
student sizes) and the CNN+LSTM baseline, assembled from engine layers.

All networks take windows shaped ``[B, W, C]`` and return ``[B, h]``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .engine import (
    LSTM, Conv1d, LayerNorm, Linear, MultiHeadAttention, ParamStore, ReLU,
    load_checkpoint, positional_encoding, save_checkpoint,
)
from .series import HORIZONS, WINDOW

N_FEATURES = 3


def _check_horizon(h: int) -> None:
    if h not in HORIZONS:
        raise ValueError(f"horizon must be one of {HORIZONS}, got {h}")


@dataclass(frozen=True)
class LowFreqConfig:
    """``lstm_vec`` lists ``(input cells, output cells)`` per stacked LSTM
    layer. The last conv layer emits ``lstm_vec[0][0]`` channels so the
    first LSTM sees its declared input width."""

    lstm_vec: tuple[tuple[int, int], ...] = ((128, 64),)
    conv_widths: tuple[int, int, int] = (32, 32, 64)
    fc_hidden: int = 32
    horizon: int = 12
    n_features: int = N_FEATURES
    window: int = WINDOW
    flatten_single_step: bool = False

    def __post_init__(self):
        _check_horizon(self.horizon)
        vec = tuple(tuple(int(v) for v in pair) for pair in self.lstm_vec)
        object.__setattr__(self, "lstm_vec", vec)
        object.__setattr__(self, "conv_widths", tuple(self.conv_widths))
        if not vec:
            raise ValueError("lstm_vec needs at least one layer")
        for (_, out_prev), (in_next, _) in zip(vec, vec[1:]):
            if out_prev != in_next:
                raise ValueError(f"stacked LSTM widths disagree: {out_prev} -> {in_next}")
        if len(self.conv_widths) != 3:
            raise ValueError("conv_widths gives the first three conv widths")
        if self.window - 8 < 1:
            raise ValueError("window too short for four kernel-3 convolutions")

    @property
    def label(self) -> str:
        return "{[" + ",".join(f"({a},{b})" for a, b in self.lstm_vec) + "]}"


@dataclass(frozen=True)
class TransformerConfig:
    d_model: int = 32
    heads: int = 2
    ff_dim: int = 64
    layers: int = 1
    horizon: int = 12
    n_features: int = N_FEATURES
    window: int = WINDOW
    role: str = "student"

    def __post_init__(self):
        _check_horizon(self.horizon)
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.layers != 1:
            raise ValueError("only single-layer encoders are supported")

    @classmethod
    def teacher(cls, horizon: int = 12, **kw) -> "TransformerConfig":
        return cls(d_model=64, heads=4, ff_dim=128, horizon=horizon, role="teacher", **kw)

    @classmethod
    def student(cls, horizon: int = 12, **kw) -> "TransformerConfig":
        return cls(d_model=32, heads=2, ff_dim=64, horizon=horizon, role="student", **kw)


@dataclass(frozen=True)
class BaselineConfig:
    conv_widths: tuple[int, int] = (64, 128)
    lstm: tuple[int, int] = (128, 64)
    fc: tuple[int, ...] = (32, 16)
    horizon: int = 12
    n_features: int = N_FEATURES
    window: int = WINDOW

    def __post_init__(self):
        _check_horizon(self.horizon)
        object.__setattr__(self, "conv_widths", tuple(self.conv_widths))
        object.__setattr__(self, "lstm", tuple(self.lstm))
        object.__setattr__(self, "fc", tuple(self.fc))
        if self.conv_widths[-1] != self.lstm[0]:
            raise ValueError("last conv width must equal the LSTM input width")


class Model:
    kind = "model"

    def __init__(self, config, seed: int = 0, dtype=np.float64):
        self.config = config
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.store = ParamStore(self.dtype)
        self.rng = np.random.default_rng(seed)
        self.layers: list = []

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def _layer(self, layer):
        self.layers.append(layer)
        return layer

    def __call__(self, x):
        return self.forward(x)

    def predict(self, x, batch_size: int = 512) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if len(x) == 0:
            return np.zeros((0, self.horizon))
        return np.concatenate([self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)])

    def _check_input(self, x):
        x = np.asarray(x, dtype=self.dtype)
        c = self.config
        if x.ndim != 3 or x.shape[1:] != (c.window, c.n_features):
            raise ValueError(f"{self.kind}: expected [B, {c.window}, {c.n_features}], got {x.shape}")
        return x


class LowFreqModel(Model):
    """conv x4 -> LSTM stack -> last hidden state -> FC -> h outputs."""

    kind = "low_freq"

    def __init__(self, config: LowFreqConfig, seed: int = 0, dtype=np.float64):
        super().__init__(config, seed, dtype)
        s, r = self.store, self.rng
        w = (config.n_features, *config.conv_widths, config.lstm_vec[0][0])
        self.convs = [self._layer(Conv1d(s, f"conv{i + 1}", w[i], w[i + 1], r)) for i in range(4)]
        self.conv_acts = [ReLU() for _ in self.convs]
        self.conv_len = config.window - 8
        lstm_in = config.lstm_vec[0][0]
        if config.flatten_single_step:
            lstm_in *= self.conv_len
        self.lstms = []
        for i, (a, b) in enumerate(config.lstm_vec):
            self.lstms.append(self._layer(LSTM(s, f"lstm{i + 1}", lstm_in if i == 0 else a, b, r)))
        hidden = config.lstm_vec[-1][1]
        self.fc1 = self._layer(Linear(s, "fc1", hidden, config.fc_hidden, r))
        self.fc_act = ReLU()
        self.fc2 = self._layer(Linear(s, "fc2", config.fc_hidden, config.horizon, r))

    def forward(self, x):
        h = self._check_input(x)
        for conv, act in zip(self.convs, self.conv_acts):
            h = act(conv(h))
        self._conv_shape = h.shape
        if self.config.flatten_single_step:
            h = h.reshape(h.shape[0], 1, -1)
        for lstm in self.lstms:
            h = lstm(h)
        self._seq_shape = h.shape
        return self.fc2(self.fc_act(self.fc1(h[:, -1])))

    def backward(self, dy):
        d = self.fc1.backward(self.fc_act.backward(self.fc2.backward(dy)))
        dseq = np.zeros(self._seq_shape, dtype=self.dtype)
        dseq[:, -1] = d
        for lstm in reversed(self.lstms):
            dseq = lstm.backward(dseq)
        d = dseq.reshape(self._conv_shape)
        for conv, act in zip(reversed(self.convs), reversed(self.conv_acts)):
            d = conv.backward(act.backward(d))
        return d


class TransformerModel(Model):
    """Input projection + sinusoidal positions -> one post-norm encoder
    layer -> final time step -> linear head."""

    kind = "transformer"

    def __init__(self, config: TransformerConfig, seed: int = 0, dtype=np.float64):
        super().__init__(config, seed, dtype)
        s, r, d = self.store, self.rng, config.d_model
        self.embed = self._layer(Linear(s, "embed", config.n_features, d, r))
        self.attn = self._layer(MultiHeadAttention(s, "attn", d, config.heads, r))
        self.norm1 = self._layer(LayerNorm(s, "norm1", d))
        self.ff1 = self._layer(Linear(s, "ff1", d, config.ff_dim, r))
        self.ff_act = ReLU()
        self.ff2 = self._layer(Linear(s, "ff2", config.ff_dim, d, r))
        self.norm2 = self._layer(LayerNorm(s, "norm2", d))
        self.head = self._layer(Linear(s, "head", d, config.horizon, r))
        self.pe = positional_encoding(config.window, d).astype(self.dtype)

    def forward(self, x):
        x = self._check_input(x)
        h = self.embed(x) + self.pe
        h1 = self.norm1(h + self.attn(h))
        h2 = self.norm2(h1 + self.ff2(self.ff_act(self.ff1(h1))))
        self._seq_shape = h2.shape
        return self.head(h2[:, -1])

    def backward(self, dy):
        dh2 = np.zeros(self._seq_shape, dtype=self.dtype)
        dh2[:, -1] = self.head.backward(dy)
        dsum2 = self.norm2.backward(dh2)
        dh1 = dsum2 + self.ff1.backward(self.ff_act.backward(self.ff2.backward(dsum2)))
        dsum1 = self.norm1.backward(dh1)
        dh = dsum1 + self.attn.backward(dsum1)
        return self.embed.backward(dh)


class BaselineModel(Model):
    """Two kernel-3 convs -> one LSTM -> three FC layers."""

    kind = "baseline"

    def __init__(self, config: BaselineConfig, seed: int = 0, dtype=np.float64):
        super().__init__(config, seed, dtype)
        s, r = self.store, self.rng
        w = (config.n_features, *config.conv_widths)
        self.convs = [self._layer(Conv1d(s, f"conv{i + 1}", w[i], w[i + 1], r)) for i in range(len(w) - 1)]
        self.conv_acts = [ReLU() for _ in self.convs]
        self.lstm = self._layer(LSTM(s, "lstm1", config.lstm[0], config.lstm[1], r))
        dims = (config.lstm[1], *config.fc, config.horizon)
        self.fcs = [self._layer(Linear(s, f"fc{i + 1}", dims[i], dims[i + 1], r)) for i in range(len(dims) - 1)]
        self.fc_acts = [ReLU() for _ in self.fcs[:-1]]

    def forward(self, x):
        h = self._check_input(x)
        for conv, act in zip(self.convs, self.conv_acts):
            h = act(conv(h))
        self._conv_shape = h.shape
        h = self.lstm(h)
        self._seq_shape = h.shape
        h = h[:, -1]
        for fc, act in zip(self.fcs[:-1], self.fc_acts):
            h = act(fc(h))
        return self.fcs[-1](h)

    def backward(self, dy):
        d = self.fcs[-1].backward(dy)
        for fc, act in zip(reversed(self.fcs[:-1]), reversed(self.fc_acts)):
            d = fc.backward(act.backward(d))
        dseq = np.zeros(self._seq_shape, dtype=self.dtype)
        dseq[:, -1] = d
        d = self.lstm.backward(dseq)
        for conv, act in zip(reversed(self.convs), reversed(self.conv_acts)):
            d = conv.backward(act.backward(d))
        return d


def build_low_freq(config: LowFreqConfig = LowFreqConfig(), seed: int = 0, dtype=np.float64) -> LowFreqModel:
    return LowFreqModel(config, seed, dtype)


def build_transformer(config: TransformerConfig = TransformerConfig(), seed: int = 0,
                      dtype=np.float64) -> TransformerModel:
    return TransformerModel(config, seed, dtype)


def build_baseline(config: BaselineConfig = BaselineConfig(), seed: int = 0, dtype=np.float64) -> BaselineModel:
    return BaselineModel(config, seed, dtype)


def count_params(model: Model) -> int:
    return model.store.count()


def param_breakdown(model: Model) -> dict[str, int]:
    return {layer.name: layer.n_params() for layer in model.layers}


_KINDS = {
    "low_freq": (LowFreqModel, LowFreqConfig),
    "transformer": (TransformerModel, TransformerConfig),
    "baseline": (BaselineModel, BaselineConfig),
}


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def save_model(model: Model, path) -> Path:
    """Write weights to ``path`` and an architecture sidecar next to it."""
    path = Path(path)
    save_checkpoint(path, model.store)
    sidecar = {
        "kind": model.kind,
        "seed": model.seed,
        "dtype": model.dtype.name,
        "config": asdict(model.config),
        "total_params": count_params(model),
        "layers": param_breakdown(model),
    }
    path.with_suffix(".arch.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return path


def load_model(path) -> Model:
    path = Path(path)
    meta = json.loads(path.with_suffix(".arch.json").read_text())
    cls, cfg_cls = _KINDS[meta["kind"]]
    names = {f.name for f in fields(cfg_cls)}
    cfg = cfg_cls(**{k: _tuplify(v) for k, v in meta["config"].items() if k in names})
    model = cls(cfg, seed=meta["seed"], dtype=meta.get("dtype", "float64"))
    model.store.load_state_dict(load_checkpoint(path))
    return model
