"""End-to-end GlucoNet: features, training, recombined inference, reports.

Training order per run: low-frequency CNN-LSTM on the normalized low band,
teacher transformer on the raw high band, student distilled from the
teacher. The forecast is ``denorm(low prediction) + student prediction``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import metrics
from .dataio import PatientRecord, events_from_series, record_to_series
from .distill import KdConfig, distill_train
from .engine import ParamStore, save_checkpoint
from .models import (
    BaselineConfig, LowFreqConfig, Model, TransformerConfig, build_baseline, build_low_freq,
    build_transformer, count_params, load_model, save_model,
)
from .series import (
    HORIZONS, WINDOW, NormStats, TimeAlignedSeries, WindowedDataset, apply_norm, chronological_split,
    concat_windows, fit_norm, invert_norm, make_windows,
)
from .ssr import CarbKineticsParams, active_insulin_series, insulin_activity_params, operative_carbs
from .training import History, TrainConfig, TrainingDiverged, fit
from .vmd import VmdConfig, group_modes, vmd_decompose

logger = logging.getLogger(__name__)

VARIANTS = {
    "baseline": "Baseline",
    "gluconet_lt": "GlucoNet(LT)",
    "gluconet_st": "GlucoNet(ST)",
    "gluconet_kd_st": "GlucoNet+KD(ST)",
}
HIGH_MODEL = {"gluconet_lt": "teacher", "gluconet_st": "student", "gluconet_kd_st": "student_kd"}
SANITY_RANGE = (0.0, 600.0)
DESK_EPOCHS = (30, 50, 50)
FULL_EPOCHS = (300, 500, 500)


@dataclass(frozen=True)
class ExperimentConfig:
    horizons: tuple[int, ...] = HORIZONS
    window: int = WINDOW
    train_fraction: float = 0.8
    vmd: VmdConfig = VmdConfig()
    split_index: int = 2
    residual_to: str = "high"
    carbs: CarbKineticsParams = CarbKineticsParams()
    insulin_peak: float = 55.0
    insulin_duration: float = 300.0
    low: LowFreqConfig = LowFreqConfig()
    teacher: TransformerConfig = TransformerConfig.teacher()
    student: TransformerConfig = TransformerConfig.student()
    baseline: BaselineConfig = BaselineConfig()
    kd: KdConfig = KdConfig(epochs=DESK_EPOCHS[2])
    epochs_low: int = DESK_EPOCHS[0]
    epochs_teacher: int = DESK_EPOCHS[1]
    lr: float = 1e-3
    batch_size: int = 64
    clip_norm: float | None = 1.0
    runs: int = 5
    seed: int = 0
    variants: tuple[str, ...] = tuple(VARIANTS)
    normalize_aux: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        for h in self.horizons:
            if h not in HORIZONS:
                raise ValueError(f"unsupported horizon {h}")
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ValueError(f"unknown variants {sorted(unknown)}")
        if self.residual_to not in ("low", "high"):
            raise ValueError("residual_to must be low or high")
        if not 1 <= self.split_index < self.vmd.m:
            raise ValueError("split_index must lie in [1, m)")
        if self.runs < 1:
            raise ValueError("runs must be positive")

    def with_full_epochs(self) -> "ExperimentConfig":
        lo, te, st = FULL_EPOCHS
        return replace(self, epochs_low=lo, epochs_teacher=te, kd=replace(self.kd, epochs=st))

    def for_horizon(self, h: int):
        return (
            replace(self.low, horizon=h, window=self.window),
            replace(self.teacher, horizon=h, window=self.window),
            replace(self.student, horizon=h, window=self.window),
            replace(self.baseline, horizon=h, window=self.window),
        )


@dataclass(frozen=True)
class FeatureSets:
    """Aligned windows for one split and horizon.

    ``lffd`` targets are the normalized low band, ``hffd`` targets the raw
    high band, ``base`` holds the undecomposed inputs for the baseline and
    ``glucose_targets`` the raw glucose (mg/dL) to score against.
    """

    lffd: WindowedDataset
    hffd: WindowedDataset
    base: WindowedDataset
    glucose_targets: np.ndarray
    norm_stats: NormStats
    horizon: int

    def __len__(self):
        return len(self.lffd)


# -- features --------------------------------------------------------------

def _segments(series) -> list[TimeAlignedSeries]:
    return [series] if isinstance(series, TimeAlignedSeries) else list(series)


def prepare_split(segments, config: ExperimentConfig) -> list[TimeAlignedSeries]:
    """Add ``low``, ``high``, ``carbs_op`` and ``insulin`` channels to each
    segment. Each segment is decomposed on its own."""
    out = []
    ins = insulin_activity_params(config.insulin_peak, config.insulin_duration)
    for seg in _segments(segments):
        if seg.length < max(16, config.window + 1):
            logger.info("skipping segment of %d samples", seg.length)
            continue
        modes = vmd_decompose(seg["glucose"], config.vmd)
        low, high = group_modes(modes, config.split_index, config.residual_to)
        events = events_from_series(seg)
        out.append(seg.with_channels(
            low=low,
            high=high,
            carbs_op=operative_carbs(events, seg, config.carbs),
            insulin=active_insulin_series(events, seg, ins),
        ))
    return out


def fit_feature_norm(train_prepared: Sequence[TimeAlignedSeries], normalize_aux: bool) -> NormStats:
    cat = {c: np.concatenate([s[c] for s in train_prepared]) for c in ("low", "glucose", "carbs_op", "insulin")}
    channels = ["low", "glucose"] + (["carbs_op", "insulin"] if normalize_aux else [])
    stats = fit_norm(cat, channels)
    if not normalize_aux:
        stats.location.update(carbs_op=0.0, insulin=0.0)
        stats.scale.update(carbs_op=1.0, insulin=1.0)
    return stats


def window_split(prepared: Sequence[TimeAlignedSeries], stats: NormStats, window: int, horizon: int) -> FeatureSets:
    lf, hf, bs, gt = [], [], [], []
    for seg in prepared:
        if seg.length < window + horizon:
            continue
        aux = {c: apply_norm(seg[c], stats, c) for c in ("carbs_op", "insulin")}
        view = seg.with_channels(
            low_n=apply_norm(seg["low"], stats, "low"),
            glucose_n=apply_norm(seg["glucose"], stats, "glucose"),
            carbs_n=aux["carbs_op"],
            insulin_n=aux["insulin"],
        )
        lf.append(make_windows(view, window, horizon, "low_n", ("low_n", "carbs_n", "insulin_n")))
        hf.append(make_windows(view, window, horizon, "high", ("high", "carbs_n", "insulin_n")))
        bs.append(make_windows(view, window, horizon, "glucose_n", ("glucose_n", "carbs_n", "insulin_n")))
        gt.append(make_windows(view, window, horizon, "glucose", ("glucose",)).targets)
    if not lf:
        raise ValueError(f"no segment is long enough for window={window}, horizon={horizon}")
    return FeatureSets(concat_windows(lf), concat_windows(hf), concat_windows(bs),
                       np.concatenate(gt), stats, horizon)


def build_feature_sets(train, test, config: ExperimentConfig, horizons: Iterable[int] | None = None):
    """Returns ``{h: (train FeatureSets, test FeatureSets)}``.

    The train and test splits are decomposed independently; normalization
    statistics come from the training split only.
    """
    tr = prepare_split(train, config)
    te = prepare_split(test, config)
    if not tr or not te:
        raise ValueError("train or test split has no usable segment")
    stats = fit_feature_norm(tr, config.normalize_aux)
    out = {}
    for h in horizons or config.horizons:
        out[h] = (window_split(tr, stats, config.window, h), window_split(te, stats, config.window, h))
    return out


# -- training and inference ------------------------------------------------

@dataclass
class TrainedStates:
    low: Model | None = None
    teacher: Model | None = None
    student: Model | None = None
    student_kd: Model | None = None
    baseline: Model | None = None
    histories: dict[str, History] = field(default_factory=dict)

    def high_model(self, variant: str) -> Model:
        m = getattr(self, HIGH_MODEL[variant])
        if m is None:
            raise ValueError(f"variant {variant!r} was not trained")
        return m

    def param_count(self, variant: str) -> int:
        if variant == "baseline":
            return count_params(self.baseline)
        return count_params(self.low) + count_params(self.high_model(variant))


def train_all(fs: FeatureSets, config: ExperimentConfig, seed: int, variants: Sequence[str] | None = None) -> TrainedStates:
    variants = tuple(variants or config.variants)
    low_cfg, t_cfg, s_cfg, b_cfg = config.for_horizon(fs.horizon)
    dtype = np.dtype(config.dtype)

    def tc(epochs):
        return TrainConfig(epochs=epochs, lr=config.lr, batch_size=config.batch_size,
                           clip_norm=config.clip_norm, seed=seed)

    st = TrainedStates()
    if any(v != "baseline" for v in variants):
        st.low = build_low_freq(low_cfg, seed, dtype)
        st.histories["low"] = fit(st.low, fs.lffd.inputs, fs.lffd.targets, tc(config.epochs_low))
    if {"gluconet_lt", "gluconet_kd_st"} & set(variants):
        st.teacher = build_transformer(t_cfg, seed, dtype)
        st.histories["teacher"] = fit(st.teacher, fs.hffd.inputs, fs.hffd.targets, tc(config.epochs_teacher))
    if "gluconet_kd_st" in variants:
        st.student_kd, st.histories["student_kd"] = distill_train(
            st.teacher, s_cfg, fs.hffd.inputs, fs.hffd.targets, config.kd, tc(config.kd.epochs), dtype)
    if "gluconet_st" in variants:
        st.student = build_transformer(s_cfg, seed, dtype)
        st.histories["student"] = fit(st.student, fs.hffd.inputs, fs.hffd.targets, tc(config.kd.epochs))
    if "baseline" in variants:
        st.baseline = build_baseline(b_cfg, seed, dtype)
        st.histories["baseline"] = fit(st.baseline, fs.base.inputs, fs.base.targets, tc(config.epochs_low))
    return st


def predict_full(states: TrainedStates, fs: FeatureSets, variant: str = "gluconet_kd_st") -> np.ndarray:
    """Forecast glucose in mg/dL, shape ``[N, h]``."""
    if variant == "baseline":
        if states.baseline.horizon != fs.horizon:
            raise ValueError("horizon mismatch")
        pred = invert_norm(states.baseline.predict(fs.base.inputs), fs.norm_stats, "glucose")
    else:
        high = states.high_model(variant)
        if states.low.horizon != fs.horizon or high.horizon != fs.horizon:
            raise ValueError(f"model horizons ({states.low.horizon}, {high.horizon}) != features {fs.horizon}")
        y1 = states.low.predict(fs.lffd.inputs).astype(float)
        y2 = high.predict(fs.hffd.inputs).astype(float)
        pred = invert_norm(y1, fs.norm_stats, "low") + y2
    lo, hi = SANITY_RANGE
    outside = int(np.sum((pred < lo) | (pred > hi)))
    if outside:
        logger.warning("%s: %d predictions outside [%g, %g] mg/dL (not clamped)", variant, outside, lo, hi)
    return pred


KD_ALPHAS = (0.1, 0.3, 0.5, 0.7, 0.9)


def kd_alpha_sweep(train_fs: FeatureSets, test_fs: FeatureSets, config: ExperimentConfig, seed: int,
                   alphas: Sequence[float] = KD_ALPHAS) -> list[dict]:
    """Test metrics of the distilled student for each KD weight ``alpha``.

    The low model and teacher are trained once and shared; only the student
    is retrained per ``alpha``.
    """
    st = train_all(train_fs, config, seed, ["gluconet_lt"])
    _, _, s_cfg, _ = config.for_horizon(train_fs.horizon)
    tc = TrainConfig(epochs=config.kd.epochs, lr=config.lr, batch_size=config.batch_size,
                     clip_norm=config.clip_norm, seed=seed)
    rows = []
    for a in alphas:
        st.student_kd, _ = distill_train(st.teacher, s_cfg, train_fs.hffd.inputs, train_fs.hffd.targets,
                                         replace(config.kd, alpha=float(a)), tc, np.dtype(config.dtype))
        rmse, mae, r2 = metrics.compute_metrics(test_fs.glucose_targets, predict_full(st, test_fs, "gluconet_kd_st"))
        rows.append(dict(horizon_min=5 * train_fs.horizon, seed=seed, alpha=float(a), tau=config.kd.tau,
                         rmse=rmse, mae=mae, r2=r2))
    return rows


# -- experiments -----------------------------------------------------------

@dataclass
class PatientData:
    patient_id: str
    train: list[TimeAlignedSeries]
    test: list[TimeAlignedSeries]
    cohort: str | None = None


def patient_from_record(record: PatientRecord, train_fraction: float = 0.8, cohort: str | None = None) -> PatientData:
    """Chronologically split a single record (used when no separate test file exists)."""
    segs = record_to_series(record)
    total = sum(s.length for s in segs)
    cut = int(round(total * train_fraction))
    train, test, seen = [], [], 0
    for s in segs:
        if seen + s.length <= cut:
            train.append(s)
        elif seen >= cut:
            test.append(s)
        else:
            a, b = chronological_split(s, (cut - seen) / s.length)
            train.append(a)
            test.append(b)
        seen += s.length
    return PatientData(record.patient_id, train, test, cohort)


def patient_from_files(train: PatientRecord, test: PatientRecord, cohort: str | None = None) -> PatientData:
    return PatientData(train.patient_id, record_to_series(train), record_to_series(test), cohort)


def save_states(states: TrainedStates, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in ("low", "teacher", "student", "student_kd", "baseline"):
        m = getattr(states, name)
        if m is not None:
            save_model(m, d / f"{name}.glnt")
            hist = states.histories.get(name)
            if hist is not None and hist.best_state is not None:
                # best epoch by training loss, kept next to the final weights
                save_checkpoint(d / f"{name}.best.glnt", _state_store(hist.best_state))


def _state_store(state: dict) -> ParamStore:
    store = ParamStore()
    for k, v in state.items():
        store.add(k, v)
    return store


def load_states(directory) -> TrainedStates:
    d = Path(directory)
    st = TrainedStates()
    for name in ("low", "teacher", "student", "student_kd", "baseline"):
        f = d / f"{name}.glnt"
        if f.exists():
            setattr(st, name, load_model(f))
    if all(getattr(st, n) is None for n in ("low", "baseline")):
        raise FileNotFoundError(f"no checkpoints in {d}")
    return st


def norm_to_json(stats: NormStats) -> dict:
    return {"location": dict(stats.location), "scale": dict(stats.scale)}


def norm_from_json(d: dict) -> NormStats:
    return NormStats({k: float(v) for k, v in d["location"].items()}, {k: float(v) for k, v in d["scale"].items()})


def available_variants(states: TrainedStates, requested: Sequence[str]) -> list[str]:
    out = []
    for v in requested:
        if v == "baseline":
            ok = states.baseline is not None
        else:
            ok = states.low is not None and getattr(states, HIGH_MODEL[v]) is not None
        if ok:
            out.append(v)
    return out


class ReportCollector:
    """Accumulates per-run scores into :class:`ForecastReport` objects and,
    when given a directory, appends each run's rows to ``runs.csv`` as soon
    as it is scored so partial results survive a later failure."""

    def __init__(self, out_dir=None, cohorts: dict[str, str] | None = None):
        self.out = Path(out_dir) if out_dir is not None else None
        self.cohorts = dict(cohorts or {})
        self.reports: dict[tuple, metrics.ForecastReport] = {}
        self.step_rows: list[dict] = []
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            runs = self.out / "runs.csv"
            if runs.exists():
                runs.unlink()

    def _emit(self, rows):
        if self.out is not None:
            metrics.write_rows(self.out / "runs.csv", rows, metrics.RUN_COLUMNS, append=True)

    def add_failure(self, patient_id: str, horizon: int, run: int, variants: Sequence[str], status: str):
        self._emit([dict(patient=patient_id, cohort=self.cohorts.get(patient_id, ""), horizon_min=5 * horizon,
                         model=VARIANTS[v], run=run, status=status) for v in variants])

    def score(self, patient_id: str, run: int, states: TrainedStates, fs: FeatureSets, variants: Sequence[str],
              trace: bool = False):
        h = fs.horizon
        rows = []
        preds = {}
        for v in variants:
            pred = preds[v] = predict_full(states, fs, v)
            rmse, mae, r2 = metrics.compute_metrics(fs.glucose_targets, pred)
            n_params = states.param_count(v)
            key = (patient_id, 5 * h, VARIANTS[v])
            rep = self.reports.setdefault(key, metrics.ForecastReport(VARIANTS[v], patient_id, 5 * h, n_params))
            rep.runs.append((rmse, mae, r2))
            rows.append(dict(patient=patient_id, cohort=self.cohorts.get(patient_id, ""), horizon_min=5 * h,
                             model=VARIANTS[v], run=run, params=n_params, rmse=rmse, mae=mae, r2=r2, status="ok"))
            for k, (a, b, c) in enumerate(metrics.per_step_metrics(fs.glucose_targets, pred)):
                self.step_rows.append(dict(patient=patient_id, horizon_min=5 * h, model=VARIANTS[v],
                                           run=run, step=k + 1, rmse=a, mae=b, r2=c))
        self._emit(rows)
        if trace and self.out is not None:
            _write_forecast_trace(self.out, patient_id, fs, states, preds)
        return rows

    def finish(self) -> list[metrics.ForecastReport]:
        result = list(self.reports.values())
        if self.out is not None:
            write_reports(self.out, result, self.cohorts, self.step_rows)
        return result


def run_experiment(config: ExperimentConfig, patients: Sequence[PatientData], out_dir=None) -> list[metrics.ForecastReport]:
    """Train and score every variant for every patient, horizon and run.

    With ``out_dir``, writes ``runs.csv`` (incrementally), ``summary.csv``,
    ``table.tsv``, ``per_step.csv``, ``efficiency.csv`` and one forecast
    trace per patient and horizon (first run).
    """
    col = ReportCollector(out_dir, {p.patient_id: p.cohort for p in patients if p.cohort})
    for pd in patients:
        feats = build_feature_sets(pd.train, pd.test, config)
        for h in config.horizons:
            train_fs, test_fs = feats[h]
            for run in range(config.runs):
                try:
                    states = train_all(train_fs, config, config.seed + run)
                except TrainingDiverged as exc:
                    logger.error("patient %s h=%d run %d diverged: %s", pd.patient_id, h, run, exc)
                    col.add_failure(pd.patient_id, h, run, config.variants, "diverged")
                    continue
                col.score(pd.patient_id, run, states, test_fs, config.variants, trace=run == 0)
    return col.finish()


def _write_forecast_trace(out: Path, patient_id: str, fs: FeatureSets, states: TrainedStates, preds: dict):
    """Plot data: last-step actual vs. predicted glucose plus the two bands."""
    h = fs.horizon
    cols = {"target_index": fs.lffd.target_index + h - 1, "actual": fs.glucose_targets[:, -1]}
    gn = [v for v in preds if v != "baseline"]
    if gn:
        high = states.high_model(gn[-1])
        cols["low_actual"] = invert_norm(fs.lffd.targets[:, -1], fs.norm_stats, "low")
        cols["low_pred"] = invert_norm(states.low.predict(fs.lffd.inputs)[:, -1].astype(float), fs.norm_stats, "low")
        cols["high_actual"] = fs.hffd.targets[:, -1]
        cols["high_pred"] = high.predict(fs.hffd.inputs)[:, -1]
    for v, p in preds.items():
        cols[v] = p[:, -1]
    rows = [{k: (int(c[i]) if k == "target_index" else float(c[i])) for k, c in cols.items()} for i in range(len(fs))]
    metrics.write_rows(out / f"forecast_{patient_id}_h{5 * h}.csv", rows, list(cols))


def write_reports(out: Path, reports: Sequence[metrics.ForecastReport], cohorts: dict[str, str], step_rows=()):
    out = Path(out)
    summary = [dict(patient=r.patient_id, cohort=cohorts.get(r.patient_id, ""), horizon_min=r.horizon,
                    model=r.model_id, params=r.param_count, runs=len(r.runs), rmse=r.rmse, rmse_std=r.rmse_std,
                    mae=r.mae, r2=r.r2) for r in reports]
    metrics.write_rows(out / "summary.csv", summary,
                       ["patient", "cohort", "horizon_min", "model", "params", "runs", "rmse", "rmse_std", "mae", "r2"])
    (out / "table.tsv").write_text(metrics.format_table(reports, cohorts))
    if step_rows:
        metrics.write_rows(out / "per_step.csv", step_rows,
                           ["patient", "horizon_min", "model", "run", "step", "rmse", "mae", "r2"])
    eff = []
    for h in sorted({r.horizon for r in reports}):
        pooled = {}
        for r in reports:
            if r.horizon == h:
                pooled.setdefault(r.model_id, []).append(r)
        merged = [metrics.ForecastReport(m, "all", h, rs[0].param_count, [t for r in rs for t in r.runs])
                  for m, rs in pooled.items()]
        for p in metrics.efficiency_table(merged):
            eff.append(dict(horizon_min=h, model=p.model_id, params=p.params, rmse=p.rmse, pareto=int(p.pareto)))
    metrics.write_rows(out / "efficiency.csv", eff, ["horizon_min", "model", "params", "rmse", "pareto"])


def reports_from_runs(paths: Iterable) -> tuple[list[metrics.ForecastReport], dict[str, str]]:
    """Rebuild reports from one or more ``runs.csv`` files."""
    reports: dict[tuple, metrics.ForecastReport] = {}
    cohorts = {}
    for path in paths:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["status"] != "ok":
                    continue
                if row["cohort"]:
                    cohorts[row["patient"]] = row["cohort"]
                key = (row["patient"], int(row["horizon_min"]), row["model"])
                rep = reports.setdefault(key, metrics.ForecastReport(row["model"], row["patient"],
                                                                     int(row["horizon_min"]), int(row["params"])))
                rep.runs.append((float(row["rmse"]), float(row["mae"]), float(row["r2"])))
    return list(reports.values()), cohorts
