"""Forecast error metrics, parameter-efficiency accounting and report files."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MINUTES_PER_STEP = 5


def compute_metrics(actual, predicted) -> tuple[float, float, float]:
    """RMSE, MAE and R^2 pooled over every (window, step) pair.

    R^2 is NaN when the actual values have zero variance.
    """
    y = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if y.shape != p.shape:
        raise ValueError(f"shape mismatch: actual {y.shape} vs predicted {p.shape}")
    if y.size < 2:
        raise ValueError("need at least two values")
    err = y - p
    rmse = math.sqrt(float(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(err**2)) / ss_tot if ss_tot > 0 else float("nan")
    return rmse, mae, r2


def per_step_metrics(actual, predicted) -> list[tuple[float, float, float]]:
    """Metrics for each forecast step separately (columns of ``[N, h]``)."""
    y = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if y.ndim != 2 or y.shape != p.shape:
        raise ValueError("expected matching [N, h] arrays")
    return [compute_metrics(y[:, k], p[:, k]) for k in range(y.shape[1])]


@dataclass
class ForecastReport:
    model_id: str
    patient_id: str
    horizon: int  # minutes
    param_count: int
    runs: list[tuple[float, float, float]] = field(default_factory=list)

    def __post_init__(self):
        for rmse, mae, r2 in self.runs:
            if rmse < 0 or mae < 0 or (not math.isnan(r2) and r2 > 1 + 1e-12):
                raise ValueError(f"invalid metric triple {(rmse, mae, r2)}")

    def _mean(self, k):
        vals = [r[k] for r in self.runs if not math.isnan(r[k])]
        return float(np.mean(vals)) if vals else float("nan")

    def _std(self, k):
        vals = [r[k] for r in self.runs if not math.isnan(r[k])]
        return float(np.std(vals)) if vals else float("nan")

    @property
    def rmse(self) -> float:
        return self._mean(0)

    @property
    def mae(self) -> float:
        return self._mean(1)

    @property
    def r2(self) -> float:
        return self._mean(2)

    @property
    def rmse_std(self) -> float:
        return self._std(0)


@dataclass(frozen=True)
class EfficiencyPoint:
    model_id: str
    params: int
    rmse: float
    pareto: bool


def efficiency_table(reports: Iterable[ForecastReport]) -> list[EfficiencyPoint]:
    """(params, RMSE) per configuration, sorted by parameter count, with
    Pareto flags: a point is dominated when another has no more parameters
    and no higher RMSE, and is strictly better in one of them."""
    pts = [(r.model_id, r.param_count, r.rmse) for r in reports]
    out = []
    for name, n, e in pts:
        dominated = any(
            n2 <= n and e2 <= e and (n2 < n or e2 < e) for _, n2, e2 in pts
        )
        out.append(EfficiencyPoint(name, n, e, not dominated))
    return sorted(out, key=lambda p: (p.params, p.rmse, p.model_id))


# -- report files ----------------------------------------------------------

RUN_COLUMNS = ["patient", "cohort", "horizon_min", "model", "run", "params", "rmse", "mae", "r2", "status"]


def write_rows(path, rows: Sequence[dict], columns: Sequence[str], append: bool = False) -> None:
    path = Path(path)
    new = not append or not path.exists()
    with path.open("a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        if new:
            w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k, "")) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_efficiency(path, points: Sequence[EfficiencyPoint]) -> None:
    rows = [{"model": p.model_id, "params": p.params, "rmse": p.rmse, "pareto": int(p.pareto)} for p in points]
    write_rows(path, rows, ["model", "params", "rmse", "pareto"])


def format_table(reports: Sequence[ForecastReport], cohorts: dict[str, str] | None = None,
                 horizons_min: Sequence[int] = (5, 30, 60)) -> str:
    """Human table: one row per model; RMSE, MAE and R^2 blocks, each split
    into Total plus any cohorts, each with one column per horizon. Values
    are averaged over patients and rounded to two decimals."""
    cohorts = cohorts or {}
    groups = ["Total"] + sorted({cohorts[r.patient_id] for r in reports if r.patient_id in cohorts})
    models = list(dict.fromkeys(r.model_id for r in reports))
    header = ["Model"]
    for metric in ("RMSE", "MAE", "R2"):
        for g in groups:
            header += [f"{metric} {g} {h}" for h in horizons_min]
    lines = ["\t".join(header)]
    for m in models:
        row = [m]
        for k in range(3):
            for g in groups:
                for h in horizons_min:
                    vals = [
                        r._mean(k) for r in reports
                        if r.model_id == m and r.horizon == h
                        and (g == "Total" or cohorts.get(r.patient_id) == g)
                    ]
                    vals = [v for v in vals if not math.isnan(v)]
                    row.append(f"{np.mean(vals):.2f}" if vals else "-")
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"
