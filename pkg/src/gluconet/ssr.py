"""Sparse signal reconstruction: meal and bolus events to continuous curves.

Meals become an "operative carbohydrate" curve (delayed linear ramp to the
meal size, then linear decay). Boluses become an active-insulin curve built
from the normalized insulin-on-board profile scaled by dose.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Iterable, Literal, NamedTuple, Sequence

import numpy as np

from .series import STEP


class EventRecord(NamedTuple):
    time: datetime
    kind: Literal["meal", "bolus"]
    magnitude: float


class Grid(NamedTuple):
    start_time: datetime
    length: int
    step: timedelta = STEP


@dataclass(frozen=True)
class CarbKineticsParams:
    """Per-sample rates and breakpoints (in samples after the meal)."""

    alpha_inc: float = 0.11
    alpha_dec: float = 0.028
    delay: int = 3
    peak_at: int = 12
    end_at: int = 48

    def __post_init__(self):
        if not (self.alpha_inc > 0 and self.alpha_dec > 0):
            raise ValueError("carb rates must be positive")
        if not (0 < self.delay < self.peak_at < self.end_at):
            raise ValueError("need 0 < delay < peak_at < end_at")


@dataclass(frozen=True)
class InsulinKineticsParams:
    t_p: float
    t_d: float
    tau: float
    a: float
    S: float


def _as_grid(grid) -> Grid:
    if isinstance(grid, Grid):
        return grid
    return Grid(grid.start_time, grid.length, grid.step)


def _event_offsets(events: Iterable[EventRecord], grid: Grid, kind: str):
    idx, mags = [], []
    for ev in events:
        if ev.kind != kind:
            continue
        if ev.magnitude < 0 or not math.isfinite(ev.magnitude):
            raise ValueError(f"{kind} event at {ev.time} has invalid magnitude {ev.magnitude}")
        idx.append(round((ev.time - grid.start_time) / grid.step))
        mags.append(float(ev.magnitude))
    return np.array(idx, dtype=int), np.array(mags, dtype=float)


def carb_kernel(params: CarbKineticsParams = CarbKineticsParams()) -> np.ndarray:
    """Response of a 1 g meal at sample offsets ``0 .. end_at - 1``."""
    s = np.arange(params.end_at, dtype=float)
    out = np.zeros_like(s)
    ramp = (s >= params.delay) & (s < params.peak_at)
    out[ramp] = params.alpha_inc * (s[ramp] - (params.delay - 1))
    decay = s >= params.peak_at
    out[decay] = np.maximum(0.0, 1.0 - params.alpha_dec * (s[decay] - params.peak_at))
    return out


def _superpose(offsets: np.ndarray, mags: np.ndarray, kernel: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    klen = len(kernel)
    for k0, m in zip(offsets, mags):
        lo, hi = max(k0, 0), min(k0 + klen, n)
        if lo >= hi:
            continue
        out[lo:hi] += m * kernel[lo - k0 : hi - k0]
    return out


def operative_carbs(
    events: Sequence[EventRecord],
    grid,
    params: CarbKineticsParams = CarbKineticsParams(),
) -> np.ndarray:
    """Operative carbohydrate curve on ``grid``; meals superpose additively.

    Event times are snapped to the nearest grid sample. Meals before the grid
    start still contribute their tails.
    """
    grid = _as_grid(grid)
    offsets, mags = _event_offsets(events, grid, "meal")
    return _superpose(offsets, mags, carb_kernel(params), grid.length)


def insulin_activity_params(t_p: float = 55.0, t_d: float = 300.0) -> InsulinKineticsParams:
    """Derive time constant, rise factor and scale from peak time and duration (minutes)."""
    if not (t_p > 0 and t_d > 0):
        raise ValueError("t_p and t_d must be positive")
    ratio = 1.0 - 2.0 * t_p / t_d
    # tau blows up as t_p -> t_d/2; the guard keeps exp(-t_d/tau) meaningful
    if ratio <= 1e-6:
        raise ValueError(f"t_p={t_p} must be below t_d/2={t_d / 2}")
    tau = t_p * (1.0 - t_p / t_d) / ratio
    a = 2.0 * tau / t_d
    S = 1.0 / (1.0 - a + (1.0 + a) * math.exp(-t_d / tau))
    return InsulinKineticsParams(t_p=t_p, t_d=t_d, tau=tau, a=a, S=S)


def iob_curve(elapsed, params: InsulinKineticsParams) -> np.ndarray:
    """Fraction of a bolus still on board after ``elapsed`` minutes, in [0, 1]."""
    t = np.asarray(elapsed, dtype=float)
    if np.any(t < 0):
        raise ValueError("elapsed time must be non-negative")
    tau, td, a, S = params.tau, params.t_d, params.a, params.S
    inner = (t**2 / (tau * td * (1.0 - a)) - t / tau - 1.0) * np.exp(-t / tau) + 1.0
    iob = 1.0 - S * (1.0 - a) * inner
    iob = np.clip(iob, 0.0, 1.0)
    return np.where(t >= td, 0.0, iob)


def insulin_kernel(params: InsulinKineticsParams, step: timedelta = STEP) -> np.ndarray:
    minutes = step.total_seconds() / 60.0
    n = int(math.ceil(params.t_d / minutes)) + 1
    return iob_curve(np.arange(n) * minutes, params)


def active_insulin_series(
    events: Sequence[EventRecord],
    grid,
    params: InsulinKineticsParams | None = None,
) -> np.ndarray:
    """Sum over boluses of ``dose * IOB(t - t_bolus)`` on ``grid``."""
    grid = _as_grid(grid)
    params = params or insulin_activity_params()
    offsets, mags = _event_offsets(events, grid, "bolus")
    return _superpose(offsets, mags, insulin_kernel(params, grid.step), grid.length)
