"""Uniform time grid, gap imputation, windowing and normalization."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

STEP = timedelta(minutes=5)
WINDOW = 36
HORIZONS = (1, 6, 12)
MAX_GAP = 6


@dataclass(frozen=True)
class TimeAlignedSeries:
    """Uniformly sampled multi-channel record.

    ``channels`` maps a channel id to a 1-D float array; all arrays share
    one length and sit on the grid ``start_time + k * step``.
    """

    start_time: datetime
    channels: Mapping[str, np.ndarray]
    step: timedelta = STEP

    def __post_init__(self):
        if self.step <= timedelta(0):
            raise ValueError("step must be positive")
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise ValueError(f"channels have unequal lengths: {sorted(lengths)}")
        frozen = {}
        for name, values in self.channels.items():
            arr = np.array(values, dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"channel {name!r} has missing or non-finite samples")
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "channels", frozen)

    @property
    def length(self) -> int:
        return len(next(iter(self.channels.values()))) if self.channels else 0

    def __len__(self):
        return self.length

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    def timestamps(self) -> list[datetime]:
        return [self.start_time + k * self.step for k in range(self.length)]

    def slice(self, start: int, stop: int) -> "TimeAlignedSeries":
        return TimeAlignedSeries(
            start_time=self.start_time + start * self.step,
            channels={k: v[start:stop] for k, v in self.channels.items()},
            step=self.step,
        )

    def with_channels(self, **channels: np.ndarray) -> "TimeAlignedSeries":
        merged = dict(self.channels)
        merged.update(channels)
        return TimeAlignedSeries(self.start_time, merged, self.step)


@dataclass(frozen=True)
class WindowedDataset:
    """Sliding (input, target) pairs with stride one.

    ``inputs`` has shape ``[N, W, C]`` and ``targets`` ``[N, h]``.
    ``target_index[i]`` is the sample index of the first target of pair i.
    """

    inputs: np.ndarray
    targets: np.ndarray
    horizon: int
    channels: tuple[str, ...] = ()
    target_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self):
        return len(self.inputs)

    @property
    def window(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class NormStats:
    location: dict[str, float]
    scale: dict[str, float]

    def __post_init__(self):
        for name, s in self.scale.items():
            if not s > 0:
                raise ValueError(f"scale for {name!r} must be positive")


def _fill_1d(values: np.ndarray, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    valid = np.isfinite(values)
    if not valid.any():
        raise ValueError(f"channel {name!r} has no valid samples")
    if valid.all():
        return values.copy()
    idx = np.arange(len(values))
    # np.interp holds the edge values constant outside the valid range
    return np.interp(idx, idx[valid], values[valid])


def impute_gaps(
    raw: Mapping[str, Sequence[float]],
    start_time: datetime = datetime(2000, 1, 1),
    step: timedelta = STEP,
) -> TimeAlignedSeries:
    """Fill missing samples (NaN or None) on a uniform grid.

    Interior gaps are linearly interpolated, leading and trailing gaps take
    the nearest valid value. Splitting on long gaps is done beforehand with
    :func:`split_on_gaps`.
    """
    filled = {}
    for name, values in raw.items():
        arr = np.array([np.nan if v is None else v for v in values], dtype=float)
        if np.isfinite(arr).sum() < 1:
            raise ValueError(f"channel {name!r} is entirely missing")
        filled[name] = _fill_1d(arr, name)
    return TimeAlignedSeries(start_time=start_time, channels=filled, step=step)


def split_on_gaps(values: Sequence[float], max_gap: int = MAX_GAP) -> list[tuple[int, int]]:
    """Return ``[start, stop)`` ranges separated by runs of more than
    ``max_gap`` missing samples. Leading and trailing gaps are trimmed."""
    arr = np.asarray(values, dtype=float)
    valid = np.flatnonzero(np.isfinite(arr))
    if len(valid) == 0:
        return []
    segments = []
    seg_start = valid[0]
    prev = valid[0]
    for i in valid[1:]:
        if i - prev - 1 > max_gap:
            segments.append((int(seg_start), int(prev) + 1))
            seg_start = i
        prev = i
    segments.append((int(seg_start), int(prev) + 1))
    return segments


def make_windows(
    series: TimeAlignedSeries,
    window: int,
    horizon: int,
    target_channel: str,
    input_channels: Sequence[str] | None = None,
) -> WindowedDataset:
    """Cut ``series`` into stride-1 windows of ``window`` samples, each
    paired with the next ``horizon`` samples of ``target_channel``."""
    if window < 1 or horizon < 1:
        raise ValueError("window and horizon must be positive")
    n = series.length - window - horizon + 1
    if n < 1:
        raise ValueError(
            f"series of length {series.length} too short for window={window}, horizon={horizon}"
        )
    names = tuple(input_channels) if input_channels is not None else tuple(series.channels)
    data = np.stack([series[c] for c in names], axis=-1)
    target = series[target_channel]
    idx = np.arange(n)[:, None]
    inputs = data[idx + np.arange(window)[None, :]]
    targets = target[idx + window + np.arange(horizon)[None, :]]
    return WindowedDataset(
        inputs=inputs,
        targets=targets,
        horizon=horizon,
        channels=names,
        target_index=np.arange(n) + window,
    )


def concat_windows(parts: Sequence[WindowedDataset]) -> WindowedDataset:
    if not parts:
        raise ValueError("no windowed segments to concatenate")
    horizon = parts[0].horizon
    if any(p.horizon != horizon for p in parts):
        raise ValueError("horizon mismatch between segments")
    return WindowedDataset(
        inputs=np.concatenate([p.inputs for p in parts]),
        targets=np.concatenate([p.targets for p in parts]),
        horizon=horizon,
        channels=parts[0].channels,
        target_index=np.concatenate([p.target_index for p in parts]),
    )


def fit_norm(series: TimeAlignedSeries | Mapping[str, np.ndarray], channels: Sequence[str]) -> NormStats:
    """Per-channel z-score statistics. Fit on training data only."""
    data = series.channels if isinstance(series, TimeAlignedSeries) else series
    loc, scale = {}, {}
    for c in channels:
        x = np.asarray(data[c], dtype=float)
        mu = float(x.mean())
        sd = float(x.std())
        if not sd > 0:
            warnings.warn(f"channel {c!r} is constant; using scale 1", RuntimeWarning, stacklevel=2)
            sd = 1.0
        loc[c], scale[c] = mu, sd
    return NormStats(loc, scale)


def apply_norm(x: np.ndarray, stats: NormStats, channel: str) -> np.ndarray:
    return (np.asarray(x, dtype=float) - stats.location[channel]) / stats.scale[channel]


def invert_norm(z: np.ndarray, stats: NormStats, channel: str) -> np.ndarray:
    return np.asarray(z, dtype=float) * stats.scale[channel] + stats.location[channel]


def chronological_split(series: TimeAlignedSeries, train_fraction: float = 0.8):
    """Split into a leading train part and trailing test part."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    cut = int(round(series.length * train_fraction))
    return series.slice(0, cut), series.slice(cut, series.length)
