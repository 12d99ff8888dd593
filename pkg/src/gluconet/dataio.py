"""Patient records: CSV interchange, OhioT1DM XML adapter, synthetic traces.

CSV schema (header is exact)::

    timestamp,glucose,carbs,bolus,basal_rate

Timestamps are ISO-8601. An empty cell means "no event of that kind on this
row". ``basal_rate`` (units/hour) starts a new piecewise-constant basal
segment.
"""
from __future__ import annotations

import csv
import logging
import math
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .series import MAX_GAP, STEP, TimeAlignedSeries, impute_gaps, split_on_gaps
from .ssr import CarbKineticsParams, Grid, active_insulin_series, insulin_activity_params, operative_carbs, EventRecord

logger = logging.getLogger(__name__)

CSV_HEADER = ["timestamp", "glucose", "carbs", "bolus", "basal_rate"]
OHIO_TS = "%d-%m-%Y %H:%M:%S"


@dataclass
class PatientRecord:
    patient_id: str
    glucose: list[tuple[datetime, float]] = field(default_factory=list)
    meals: list[tuple[datetime, float]] = field(default_factory=list)
    boluses: list[tuple[datetime, float]] = field(default_factory=list)
    basal: list[tuple[datetime, float]] = field(default_factory=list)

    def __post_init__(self):
        for name in ("glucose", "meals", "boluses", "basal"):
            stream = getattr(self, name)
            for (a, _), (b, _) in zip(stream, stream[1:]):
                if b < a:
                    raise ValueError(f"{self.patient_id}: {name} timestamps decrease at {b}")

    def counts(self) -> dict[str, int]:
        return {k: len(getattr(self, k)) for k in ("glucose", "meals", "boluses", "basal")}


class CsvFormatError(ValueError):
    pass


def _num(cell: str, line: int, col: str) -> float | None:
    cell = cell.strip()
    if not cell:
        return None
    try:
        v = float(cell)
    except ValueError:
        raise CsvFormatError(f"line {line}, column {col!r}: not a number: {cell!r}") from None
    if not math.isfinite(v):
        raise CsvFormatError(f"line {line}, column {col!r}: non-finite value")
    return v


def load_csv(path, patient_id: str | None = None) -> PatientRecord:
    path = Path(path)
    rec = PatientRecord(patient_id or path.stem)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        if header != CSV_HEADER:
            raise CsvFormatError(f"{path}: header must be {','.join(CSV_HEADER)}, got {','.join(header)}")
        last = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise CsvFormatError(f"line {lineno}: expected {len(CSV_HEADER)} columns, got {len(row)}")
            try:
                ts = datetime.fromisoformat(row[0].strip())
            except ValueError:
                raise CsvFormatError(f"line {lineno}, column 'timestamp': bad timestamp {row[0]!r}") from None
            if last is not None and ts < last:
                raise CsvFormatError(f"line {lineno}: timestamp {ts.isoformat()} precedes previous row")
            last = ts
            g, c, b, r = (_num(row[i], lineno, CSV_HEADER[i]) for i in range(1, 5))
            for val, col in ((c, "carbs"), (b, "bolus"), (r, "basal_rate")):
                if val is not None and val < 0:
                    raise CsvFormatError(f"line {lineno}, column {col!r}: negative value")
            if g is not None:
                rec.glucose.append((ts, g))
            if c is not None:
                rec.meals.append((ts, c))
            if b is not None:
                rec.boluses.append((ts, b))
            if r is not None:
                rec.basal.append((ts, r))
    logger.info("%s: loaded %s", path, rec.counts())
    return rec


def _cell(v: float | None) -> str:
    if v is None:
        return ""
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_csv(path, record: PatientRecord) -> None:
    """Write one row per distinct timestamp across all streams."""
    rows: dict[datetime, list] = {}
    for col, stream in enumerate((record.glucose, record.meals, record.boluses, record.basal), start=1):
        for ts, v in stream:
            rows.setdefault(ts, [None] * 5)
            if rows[ts][col] is not None:
                v = rows[ts][col] + v if col in (2, 3) else v
            rows[ts][col] = v
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for ts in sorted(rows):
            w.writerow([ts.isoformat()] + [_cell(v) for v in rows[ts][1:]])


def load_ohio_xml(path) -> PatientRecord:
    """Read an OhioT1DM patient file (2018 or 2020 layout).

    Maps ``glucose_level``, ``meal``, ``bolus``, ``basal`` and
    ``temp_basal``; every other section is counted and skipped.
    """
    path = Path(path)
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise ValueError(f"{path}: malformed XML: {exc}") from None
    rec = PatientRecord(root.get("id") or path.stem.split("-")[0])
    skipped: Counter[str] = Counter()
    temp: list[tuple[datetime, datetime, float]] = []

    def ts(ev, key="ts"):
        return datetime.strptime(ev.get(key), OHIO_TS)

    for section in root:
        events = list(section)
        if section.tag == "glucose_level":
            rec.glucose += [(ts(e), float(e.get("value"))) for e in events]
        elif section.tag == "meal":
            rec.meals += [(ts(e), float(e.get("carbs"))) for e in events]
        elif section.tag == "bolus":
            rec.boluses += [(ts(e, "ts_begin"), float(e.get("dose"))) for e in events]
        elif section.tag == "basal":
            rec.basal += [(ts(e), float(e.get("value"))) for e in events]
        elif section.tag == "temp_basal":
            temp += [(ts(e, "ts_begin"), ts(e, "ts_end"), float(e.get("value"))) for e in events]
        else:
            skipped[section.tag] += len(events)
    for stream in (rec.glucose, rec.meals, rec.boluses, rec.basal):
        stream.sort(key=lambda p: p[0])
    if temp:
        rec.basal = _apply_temp_basal(rec.basal, temp)
    if skipped:
        logger.warning("%s: skipped unmapped sections %s", path, dict(skipped))
    logger.info("%s: loaded %s", path, rec.counts())
    return rec


def _rate_at(segments, t):
    rate = 0.0
    for start, r in segments:
        if start > t:
            break
        rate = r
    return rate


def _apply_temp_basal(basal, temp):
    """Overlay temporary rates: each one starts a segment and the scheduled
    rate resumes at its end."""
    out = list(basal)
    for begin, end, rate in temp:
        resume = _rate_at(basal, end)
        out = [(t, r) for t, r in out if not (begin <= t < end)]
        out += [(begin, rate), (end, resume)]
    out.sort(key=lambda p: p[0])
    return out


# -- grid conversion -------------------------------------------------------

def record_to_series(record: PatientRecord, max_gap: int = MAX_GAP, step: timedelta = STEP) -> list[TimeAlignedSeries]:
    """Snap a record onto a uniform grid and cut it at long glucose gaps.

    Each segment has channels ``glucose`` (mg/dL), ``carbs`` (grams at the
    meal sample) and ``bolus`` (units; basal becomes ``rate/12`` micro-boluses
    at every 5-minute sample).
    """
    if not record.glucose:
        raise ValueError(f"{record.patient_id}: no glucose readings")
    start = record.glucose[0][0]
    n = round((record.glucose[-1][0] - start) / step) + 1
    glucose = np.full(n, np.nan)
    counts = np.zeros(n)
    sums = np.zeros(n)
    for t, v in record.glucose:
        k = round((t - start) / step)
        sums[k] += v
        counts[k] += 1
    mask = counts > 0
    glucose[mask] = sums[mask] / counts[mask]

    carbs = np.zeros(n)
    bolus = np.zeros(n)
    for t, v in record.meals:
        k = round((t - start) / step)
        if 0 <= k < n:
            carbs[k] += v
    for t, v in record.boluses:
        k = round((t - start) / step)
        if 0 <= k < n:
            bolus[k] += v
    if record.basal:
        per_step = step / timedelta(hours=1)
        times = [start + k * step for k in range(n)]
        j, rate = 0, 0.0
        for k, t in enumerate(times):
            while j < len(record.basal) and record.basal[j][0] <= t:
                rate = record.basal[j][1]
                j += 1
            bolus[k] += rate * per_step

    segments = []
    for lo, hi in split_on_gaps(glucose, max_gap):
        segments.append(impute_gaps(
            {"glucose": glucose[lo:hi], "carbs": carbs[lo:hi], "bolus": bolus[lo:hi]},
            start_time=start + lo * step, step=step,
        ))
    return segments


def events_from_series(series: TimeAlignedSeries) -> list[EventRecord]:
    """Recover meal and bolus events from the sparse ``carbs``/``bolus`` channels."""
    events = []
    for k, t in enumerate(series.timestamps()):
        if series["carbs"][k] > 0:
            events.append(EventRecord(t, "meal", float(series["carbs"][k])))
        if series["bolus"][k] > 0:
            events.append(EventRecord(t, "bolus", float(series["bolus"][k])))
    return events


# -- synthetic patients ----------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    days: int = 14
    baseline: float = 120.0
    meal_hours: tuple[float, ...] = (7.5, 12.5, 19.0)
    meal_carbs: tuple[float, ...] = (45.0, 65.0, 75.0)
    carb_jitter: float = 0.25
    time_jitter_min: float = 30.0
    snack_prob: float = 0.5
    snack_carbs: float = 20.0
    icr: float = 12.0
    carb_gain: float = 1.6
    insulin_gain: float = 4.0
    basal_rate: float = 0.8
    drift_amplitude: float = 15.0
    noise_std: float = 2.0
    seed: int = 0
    extra_meals: tuple[tuple[float, float], ...] = ()
    start: datetime = datetime(2024, 1, 1)

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("duration must be at least one day")
        if self.noise_std < 0:
            raise ValueError("noise std must be non-negative")
        if len(self.meal_hours) != len(self.meal_carbs):
            raise ValueError("meal_hours and meal_carbs differ in length")


def generate_synthetic(config: SynthConfig = SynthConfig()) -> PatientRecord:
    """Deterministic synthetic patient.

    Glucose is the baseline plus scaled operative-carb responses, minus
    scaled active-insulin responses of the boluses, plus a daily sinusoidal
    drift and Gaussian sensor noise, clipped to the CGM range [40, 400].
    ``extra_meals`` adds unbolused meals given as (minutes from start, grams).
    """
    n = config.days * 288
    grid = Grid(config.start, n, STEP)
    meals: list[tuple[datetime, float]] = []
    boluses: list[tuple[datetime, float]] = []
    for day in range(config.days):
        for slot, (hour, grams) in enumerate(zip(config.meal_hours, config.meal_carbs)):
            rng = np.random.default_rng([config.seed, day, slot])
            minute = hour * 60 + rng.normal(0, config.time_jitter_min)
            carbs = max(5.0, grams * (1 + config.carb_jitter * rng.uniform(-1, 1)))
            t = config.start + timedelta(days=day, minutes=5 * round(minute / 5))
            meals.append((t, round(carbs)))
            boluses.append((t, round(carbs / config.icr, 1)))
        rng = np.random.default_rng([config.seed, day, 1000])
        if rng.uniform() < config.snack_prob:
            minute = rng.uniform(14 * 60, 17 * 60)
            meals.append((config.start + timedelta(days=day, minutes=5 * round(minute / 5)), config.snack_carbs))
    for minute, grams in config.extra_meals:
        meals.append((config.start + timedelta(minutes=5 * round(minute / 5)), float(grams)))
    meals.sort(key=lambda p: p[0])
    boluses.sort(key=lambda p: p[0])

    meal_ev = [EventRecord(t, "meal", g) for t, g in meals]
    bolus_ev = [EventRecord(t, "bolus", d) for t, d in boluses]
    carbs_op = operative_carbs(meal_ev, grid, CarbKineticsParams())
    insulin = active_insulin_series(bolus_ev, grid, insulin_activity_params())
    hours = np.arange(n) * 5 / 60
    drift = config.drift_amplitude * np.sin(2 * np.pi * hours / 24)
    noise = np.random.default_rng([config.seed, 99991]).normal(0, config.noise_std, n) if config.noise_std > 0 else 0.0
    glucose = config.baseline + config.carb_gain * carbs_op - config.insulin_gain * insulin + drift + noise
    glucose = np.clip(glucose, 40.0, 400.0)

    times = [config.start + k * STEP for k in range(n)]
    return PatientRecord(
        patient_id=f"synth{config.seed}",
        glucose=[(t, round(float(g), 1)) for t, g in zip(times, glucose)],
        meals=meals,
        boluses=boluses,
        basal=[(config.start, config.basal_rate)] if config.basal_rate > 0 else [],
    )


# Release year of each public OhioT1DM patient, used to group report columns.
OHIO_COHORTS = {
    **{pid: "2018" for pid in ("559", "563", "570", "575", "588", "591")},
    **{pid: "2020" for pid in ("540", "544", "552", "567", "569", "584")},
}
