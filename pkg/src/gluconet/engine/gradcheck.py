from __future__ import annotations

from typing import Callable, Mapping

import numpy as np


def grad_check(
    f: Callable[[], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    max_coords: int | None = 200,
    floor: float = 1e-6,
    seed: int = 0,
) -> float:
    """Worst relative error between ``analytic`` gradients and central
    differences of ``f``.

    ``f`` takes no arguments and reads the arrays in ``params``, which are
    perturbed in place and restored. When a parameter has more than
    ``max_coords`` entries a seeded random subset is checked. The relative
    error of one coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """
    rng = np.random.default_rng(seed)
    base = f()
    if not np.isfinite(base):
        raise ValueError("function is not finite at the check point")
    worst = 0.0
    for name, p in params.items():
        g = np.asarray(analytic[name])
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {p.shape}")
        flat = p.reshape(-1)
        if flat.base is None and p.size:
            raise ValueError(f"{name}: parameter array must be contiguous to perturb in place")
        idx = np.arange(p.size)
        if max_coords is not None and p.size > max_coords:
            idx = rng.choice(p.size, size=max_coords, replace=False)
        gflat = g.reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            fp = f()
            flat[i] = old - eps
            fm = f()
            flat[i] = old
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError(f"{name}[{i}]: function not finite near check point")
            num = (fp - fm) / (2.0 * eps)
            err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), floor)
            worst = max(worst, err)
    return worst
