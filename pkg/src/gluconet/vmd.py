"""Variational mode decomposition solved by ADMM in the frequency domain.

Frequencies are normalized cycles per sample in [0, 0.5]. The signal is
mirror-extended by half its length on each side before the transform and
cropped after inversion.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VmdConfig:
    m: int = 5
    alpha: float = 2000.0
    tau_dual: float = 0.0
    tol: float = 1e-7
    max_iters: int = 500
    init: Literal["uniform", "zero", "random"] = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.tau_dual < 0:
            raise ValueError("tau_dual must be non-negative")
        if self.init not in ("uniform", "zero", "random"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class ModeSet:
    modes: np.ndarray  # [m, T]
    omegas: np.ndarray  # [m], ascending
    residual: np.ndarray  # [T]
    iterations_used: int
    converged: bool

    @property
    def m(self) -> int:
        return self.modes.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.modes.sum(axis=0) + self.residual


def _initial_omegas(config: VmdConfig) -> np.ndarray:
    if config.init == "uniform":
        return 0.5 / config.m * np.arange(config.m)
    if config.init == "zero":
        return np.zeros(config.m)
    rng = np.random.default_rng(config.seed)
    return np.sort(rng.uniform(0.0, 0.5, config.m))


def vmd_decompose(signal, config: VmdConfig = VmdConfig()) -> ModeSet:
    """Decompose ``signal`` into ``config.m`` band-limited modes.

    Each sweep updates every mode spectrum with a Wiener-like filter around
    its center frequency, moves the center to the spectral centroid of the
    mode, then (when ``tau_dual > 0``) takes a dual ascent step. Stops when
    the summed relative change of the mode spectra drops below ``tol``.
    Hitting ``max_iters`` is reported through ``converged``, not raised.
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1:
        raise ValueError("signal must be one-dimensional")
    if len(x) < 16:
        raise ValueError("signal must have at least 16 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite values")

    T = len(x)
    half = T // 2
    ext = np.concatenate([x[:half][::-1], x, x[T - half :][::-1]])
    N = len(ext)
    f_hat = np.fft.rfft(ext)
    freqs = np.fft.rfftfreq(N)
    m = config.m

    u_hat = np.zeros((m, len(freqs)), dtype=complex)
    omega = _initial_omegas(config)
    lam = np.zeros(len(freqs), dtype=complex)
    two_alpha = 2.0 * config.alpha

    converged = False
    n_iter = 0
    for n_iter in range(1, config.max_iters + 1):
        prev = u_hat.copy()
        total = u_hat.sum(axis=0)
        for k in range(m):
            others = total - u_hat[k]
            u_hat[k] = (f_hat - others + lam / 2.0) / (1.0 + two_alpha * (freqs - omega[k]) ** 2)
            total = others + u_hat[k]
            power = np.abs(u_hat[k]) ** 2
            energy = power.sum()
            if energy > 0:
                omega[k] = float(np.dot(freqs, power) / energy)
        if config.tau_dual > 0:
            lam = lam + config.tau_dual * (f_hat - total)

        change = 0.0
        for k in range(m):
            num = float(np.sum(np.abs(u_hat[k] - prev[k]) ** 2))
            den = float(np.sum(np.abs(prev[k]) ** 2))
            if num == 0.0:
                continue
            change += num / den if den > 0 else np.inf
        if change < config.tol:
            converged = True
            break

    if not converged:
        logger.warning("VMD did not converge within %d iterations", config.max_iters)

    modes = np.fft.irfft(u_hat, n=N, axis=1)[:, half : half + T]
    order = np.argsort(omega, kind="stable")
    modes = np.ascontiguousarray(modes[order])
    omegas = omega[order].copy()
    residual = x - modes.sum(axis=0)
    return ModeSet(modes=modes, omegas=omegas, residual=residual,
                   iterations_used=n_iter, converged=converged)


def group_modes(modes: ModeSet, split_index: int, residual_to: str = "high"):
    """Sum modes below ``split_index`` into a low band and the rest into a
    high band.

    ``residual_to`` picks the band that absorbs the residual (``"low"`` or
    ``"high"``); with ``"none"`` it is dropped and ``low + high + residual``
    recovers the input. With the default penalty the residual mostly holds
    mid-band content that falls between mode passbands, so it goes to the
    high band by default.
    """
    if not 1 <= split_index < modes.m:
        raise ValueError(f"split_index must lie in [1, {modes.m - 1}], got {split_index}")
    if residual_to not in ("low", "high", "none"):
        raise ValueError(f"residual_to must be low, high or none, got {residual_to!r}")
    low = modes.modes[:split_index].sum(axis=0)
    high = modes.modes[split_index:].sum(axis=0)
    if residual_to == "low":
        low = low + modes.residual
    elif residual_to == "high":
        high = high + modes.residual
    return low, high


def decompose_split(train_signal, test_signal, config: VmdConfig = VmdConfig()):
    """Decompose train and test independently so nothing from the test
    signal reaches the training features."""
    return vmd_decompose(train_signal, config), vmd_decompose(test_signal, config)


def write_modes(path, modes: ModeSet) -> None:
    """Write modes as CSV: an omega comment line, a header, one column per mode."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("# omega," + ",".join(repr(float(w)) for w in modes.omegas) + "\n")
        fh.write(",".join(f"mode_{k}" for k in range(modes.m)) + "\n")
        for row in modes.modes.T:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_modes(path):
    """Inverse of :func:`write_modes`; returns ``(modes [m, T], omegas)``."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# omega,"):
        raise ValueError(f"{path}: missing omega header")
    omegas = np.array([float(v) for v in lines[0].split(",")[1:]])
    rows = [[float(v) for v in line.split(",")] for line in lines[2:] if line]
    return np.array(rows).T, omegas
