"""Command-line entry point: ``gluconet <subcommand> ...``.

Exit status: 0 on success, 1 on a runtime failure, 2 on a usage error.
Every command writes ``manifest_<command>.json`` into its output
directory. The default output directory is ``$GLUCONET_OUT`` or
``./gluconet_out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from .dataio import OHIO_COHORTS, PatientRecord, generate_synthetic, load_csv, load_ohio_xml, record_to_series, write_csv
from .pipeline import (
    KD_ALPHAS, VARIANTS, ExperimentConfig, PatientData, ReportCollector, TrainingDiverged, available_variants,
    build_feature_sets, fit_feature_norm, kd_alpha_sweep, load_states, norm_from_json, norm_to_json, patient_from_files, patient_from_record,
    predict_full, prepare_split, reports_from_runs, save_states, train_all, window_split, write_reports,
)
from .vmd import vmd_decompose, write_modes

logger = logging.getLogger("gluconet")
ENV_OUT = "GLUCONET_OUT"


class UsageError(Exception):
    pass


def load_record(path) -> PatientRecord:
    path = Path(path)
    if path.suffix.lower() == ".xml":
        return load_ohio_xml(path)
    return load_csv(path)


# -- argument parsing ------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("-c", "--config", help="INI configuration file")
    p.add_argument("-o", "--out", help=f"output directory (default ${ENV_OUT} or ./gluconet_out)")
    p.add_argument("--seed", type=int, help="base seed override")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _experiment_flags(p: argparse.ArgumentParser):
    p.add_argument("--horizons", type=int, nargs="+", choices=(1, 6, 12), help="horizons in samples")
    p.add_argument("--runs", type=int, help="runs (seeds) per horizon")
    p.add_argument("--variants", nargs="+", choices=list(VARIANTS))
    p.add_argument("--paper-epochs", action="store_true", help="train for 300/500/500 epochs")
    p.add_argument("--workers", type=int, default=None, help="parallel patient jobs (default: CPU count)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gluconet", description="Blood-glucose forecasting experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic patient CSV")
    _common(p)
    p.add_argument("--days", type=int)
    p.add_argument("--noise-std", type=float)

    p = sub.add_parser("decompose", help="VMD of the glucose channel; writes a modes file per segment")
    _common(p)
    p.add_argument("input")
    p.add_argument("--modes", type=int)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("features", help="write SSR curves and low/high bands per sample")
    _common(p)
    p.add_argument("input")

    p = sub.add_parser("train", help="train models and save checkpoints")
    _common(p)
    _experiment_flags(p)
    p.add_argument("inputs", nargs="+", help="patient CSV or OhioT1DM XML files")
    p.add_argument("--test", nargs="+", help="matching test files; otherwise each input is split chronologically")

    p = sub.add_parser("evaluate", help="score checkpoints from a train directory on the test split")
    _common(p)
    p.add_argument("--models", help="train output directory (default: the output directory)")

    p = sub.add_parser("predict", help="forecast an input file with saved checkpoints")
    _common(p)
    p.add_argument("input")
    p.add_argument("--models", required=True, help="train output directory")
    p.add_argument("--patient", help="patient id whose checkpoints to use (default: the input's id)")
    p.add_argument("--horizon", type=int, choices=(1, 6, 12), default=12)
    p.add_argument("--run", type=int, default=0)
    p.add_argument("--variant", choices=list(VARIANTS), default="gluconet_kd_st")

    p = sub.add_parser("sweep", help="score the distilled student over a grid of KD weights alpha")
    _common(p)
    p.add_argument("input")
    p.add_argument("--horizons", type=int, nargs="+", choices=(1, 6, 12))
    p.add_argument("--runs", type=int, help="seeds per horizon")
    p.add_argument("--alphas", type=float, nargs="+", default=list(KD_ALPHAS))

    p = sub.add_parser("report", help="aggregate runs.csv files into summary, table and efficiency files")
    _common(p)
    p.add_argument("runs", nargs="+", help="runs.csv files or directories containing one")
    return ap


# -- helpers ---------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(ENV_OUT) or "gluconet_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sections(args) -> dict:
    return cfgmod.read_ini(args.config) if args.config else {}


def _experiment(args, sections=None) -> ExperimentConfig:
    over = {}
    for k in ("horizons", "runs", "variants", "seed"):
        v = getattr(args, k, None)
        if v is not None:
            over[k] = tuple(v) if isinstance(v, list) else v
    cfg = cfgmod.build_experiment_config(sections if sections is not None else _sections(args), over)
    if getattr(args, "paper_epochs", False):
        cfg = cfg.with_full_epochs()
    return cfg


def _experiment_from_dict(d: dict) -> ExperimentConfig:
    nested = {k: v for k, v in d.items() if isinstance(v, dict)}
    top = {k: v for k, v in d.items() if not isinstance(v, dict)}
    return cfgmod.build_experiment_config(nested, top)


def _write_series_csv(path: Path, seg_rows: list[dict], columns: list[str]):
    from .metrics import write_rows
    write_rows(path, seg_rows, columns)


# -- commands --------------------------------------------------------------

def cmd_synth(args, argv):
    out = _out_dir(args)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.days is not None:
        over["days"] = args.days
    if args.noise_std is not None:
        over["noise_std"] = args.noise_std
    sc = cfgmod.build_synth_config(_sections(args), over)
    rec = generate_synthetic(sc)
    path = out / f"{rec.patient_id}.csv"
    write_csv(path, rec)
    cfgmod.write_manifest(out, "synth", argv, sc, sc.seed, {"outputs": [path.name]})
    logger.info("wrote %s (%d glucose samples)", path, len(rec.glucose))


def cmd_decompose(args, argv):
    out = _out_dir(args)
    cfg = _experiment(args)
    vmd = cfg.vmd
    if args.modes is not None:
        vmd = replace(vmd, m=args.modes)
    if args.alpha is not None:
        vmd = replace(vmd, alpha=args.alpha)
    rec = load_record(args.input)
    written = []
    for i, seg in enumerate(record_to_series(rec)):
        if seg.length < 16:
            logger.warning("segment %d too short for decomposition (%d samples)", i, seg.length)
            continue
        ms = vmd_decompose(seg["glucose"], vmd)
        path = out / f"{rec.patient_id}_seg{i}_modes.csv"
        write_modes(path, ms)
        written.append(path.name)
        logger.info("segment %d: %d iterations, converged=%s", i, ms.iterations_used, ms.converged)
    if not written:
        raise RuntimeError("no segment long enough to decompose")
    cfgmod.write_manifest(out, "decompose", argv, vmd, vmd.seed, {"outputs": written})


def cmd_features(args, argv):
    out = _out_dir(args)
    cfg = _experiment(args)
    rec = load_record(args.input)
    rows = []
    for i, seg in enumerate(prepare_split(record_to_series(rec), cfg)):
        ts = seg.timestamps()
        for k in range(seg.length):
            rows.append(dict(segment=i, timestamp=ts[k].isoformat(), glucose=float(seg["glucose"][k]),
                             low=float(seg["low"][k]), high=float(seg["high"][k]),
                             carbs_op=float(seg["carbs_op"][k]), insulin=float(seg["insulin"][k])))
    path = out / f"{rec.patient_id}_features.csv"
    _write_series_csv(path, rows, ["segment", "timestamp", "glucose", "low", "high", "carbs_op", "insulin"])
    cfgmod.write_manifest(out, "features", argv, cfg, cfg.seed, {"outputs": [path.name]})


def _patients(inputs, tests, cfg) -> list[PatientData]:
    if tests and len(tests) != len(inputs):
        raise UsageError("--test needs one file per input")
    out = []
    for i, path in enumerate(inputs):
        rec = load_record(path)
        cohort = OHIO_COHORTS.get(rec.patient_id)
        if tests:
            out.append(patient_from_files(rec, load_record(tests[i]), cohort))
        else:
            out.append(patient_from_record(rec, cfg.train_fraction, cohort))
    ids = [p.patient_id for p in out]
    if len(set(ids)) != len(ids):
        raise UsageError(f"duplicate patient ids: {ids}")
    return out


def _train_patient(pd: PatientData, cfg: ExperimentConfig, root: str) -> dict:
    """One patient's training job; safe to run in a worker process."""
    tr = prepare_split(pd.train, cfg)
    if not tr:
        raise RuntimeError(f"patient {pd.patient_id}: no usable training segment")
    stats = fit_feature_norm(tr, cfg.normalize_aux)
    pdir = Path(root) / "models" / pd.patient_id
    pdir.mkdir(parents=True, exist_ok=True)
    (pdir / "norm.json").write_text(json.dumps(norm_to_json(stats), indent=2, sort_keys=True) + "\n")
    status = {}
    for h in cfg.horizons:
        fs = window_split(tr, stats, cfg.window, h)
        for run in range(cfg.runs):
            key = f"h{h}/run{run}"
            try:
                states = train_all(fs, cfg, cfg.seed + run)
            except TrainingDiverged as exc:
                logger.error("patient %s %s diverged: %s", pd.patient_id, key, exc)
                status[key] = "diverged"
                continue
            save_states(states, pdir / f"h{h}" / f"run{run}")
            losses = {k: hist.losses for k, hist in states.histories.items()}
            (pdir / f"h{h}" / f"run{run}" / "losses.json").write_text(json.dumps(losses) + "\n")
            status[key] = "ok"
    return status


def _workers(args, n_jobs) -> int:
    w = args.workers if getattr(args, "workers", None) else (os.cpu_count() or 1)
    if w < 1:
        raise UsageError("--workers must be positive")
    return max(1, min(w, n_jobs))


def cmd_train(args, argv):
    out = _out_dir(args)
    cfg = _experiment(args)
    patients = _patients(args.inputs, args.test, cfg)
    workers = _workers(args, len(patients))
    if workers == 1:
        results = [_train_patient(p, cfg, str(out)) for p in patients]
    else:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_train_patient, patients, [cfg] * len(patients), [str(out)] * len(patients)))
    state = {
        "config": cfgmod.config_dict(cfg),
        "inputs": [str(Path(p).resolve()) for p in args.inputs],
        "test": [str(Path(p).resolve()) for p in args.test] if args.test else None,
        "patients": {p.patient_id: {"cohort": p.cohort, "status": r} for p, r in zip(patients, results)},
    }
    (out / "train_state.json").write_text(json.dumps(state, indent=2, sort_keys=True) + "\n")
    cfgmod.write_manifest(out, "train", argv, cfg, cfg.seed)
    if any(v != "ok" for r in results for v in r.values()):
        raise RuntimeError("some runs diverged; see runs in train_state.json")


def _read_train_state(models: Path) -> tuple[dict, ExperimentConfig]:
    path = models / "train_state.json"
    if not path.exists():
        raise RuntimeError(f"{path} not found; run `gluconet train` first")
    state = json.loads(path.read_text())
    return state, _experiment_from_dict(state["config"])


def cmd_evaluate(args, argv):
    out = _out_dir(args)
    models = Path(args.models) if args.models else out
    state, cfg = _read_train_state(models)
    patients = _patients(state["inputs"], state["test"], cfg)
    col = ReportCollector(out, {p.patient_id: p.cohort for p in patients if p.cohort})
    for pd in patients:
        pdir = models / "models" / pd.patient_id
        stats = norm_from_json(json.loads((pdir / "norm.json").read_text()))
        te = prepare_split(pd.test, cfg)
        if not te:
            raise RuntimeError(f"patient {pd.patient_id}: no usable test segment")
        for h in cfg.horizons:
            fs = window_split(te, stats, cfg.window, h)
            for run in range(cfg.runs):
                rdir = pdir / f"h{h}" / f"run{run}"
                if not rdir.exists():
                    col.add_failure(pd.patient_id, h, run, cfg.variants, "missing")
                    continue
                states = load_states(rdir)
                col.score(pd.patient_id, run, states, fs, available_variants(states, cfg.variants), trace=run == 0)
    col.finish()
    cfgmod.write_manifest(out, "evaluate", argv, cfg, cfg.seed, {"models": str(models.resolve())})


def cmd_predict(args, argv):
    out = _out_dir(args)
    models = Path(args.models)
    state, cfg = _read_train_state(models)
    rec = load_record(args.input)
    pid = args.patient or rec.patient_id
    pdir = models / "models" / pid
    if not pdir.exists():
        raise RuntimeError(f"no checkpoints for patient {pid!r} in {models}")
    stats = norm_from_json(json.loads((pdir / "norm.json").read_text()))
    states = load_states(pdir / f"h{args.horizon}" / f"run{args.run}")
    fs = window_split(prepare_split(record_to_series(rec), cfg), stats, cfg.window, args.horizon)
    pred = predict_full(states, fs, args.variant)
    cols = ["target_index"] + [f"actual_{k + 1}" for k in range(args.horizon)] + \
           [f"pred_{k + 1}" for k in range(args.horizon)]
    rows = []
    for i in range(len(fs)):
        row = {"target_index": int(fs.lffd.target_index[i])}
        row.update({f"actual_{k + 1}": float(fs.glucose_targets[i, k]) for k in range(args.horizon)})
        row.update({f"pred_{k + 1}": float(pred[i, k]) for k in range(args.horizon)})
        rows.append(row)
    path = out / f"predict_{rec.patient_id}_h{5 * args.horizon}_{args.variant}.csv"
    _write_series_csv(path, rows, cols)
    cfgmod.write_manifest(out, "predict", argv, cfg, args.run, {"outputs": [path.name]})


def cmd_sweep(args, argv):
    out = _out_dir(args)
    cfg = _experiment(args)
    if any(not 0.0 <= a <= 1.0 for a in args.alphas):
        raise UsageError("--alphas must lie in [0, 1]")
    (pd,) = _patients([args.input], None, cfg)
    rows = []
    for h, (tr, te) in build_feature_sets(pd.train, pd.test, cfg).items():
        for run in range(cfg.runs):
            rows += [dict(patient=pd.patient_id, **r) for r in kd_alpha_sweep(tr, te, cfg, cfg.seed + run, args.alphas)]
    path = out / "alpha_sweep.csv"
    _write_series_csv(path, rows, ["patient", "horizon_min", "seed", "alpha", "tau", "rmse", "mae", "r2"])
    cfgmod.write_manifest(out, "sweep", argv, cfg, cfg.seed, {"alphas": args.alphas, "outputs": [path.name]})


def cmd_report(args, argv):
    out = _out_dir(args)
    paths = []
    for p in args.runs:
        p = Path(p)
        paths.append(p / "runs.csv" if p.is_dir() else p)
    for p in paths:
        if not p.exists():
            raise RuntimeError(f"{p} not found")
    reports, cohorts = reports_from_runs(paths)
    if not reports:
        raise RuntimeError("no successful runs to report")
    write_reports(out, reports, cohorts)
    cfgmod.write_manifest(out, "report", argv, {"runs": [str(p) for p in paths]}, None)


COMMANDS = {
    "synth": cmd_synth,
    "decompose": cmd_decompose,
    "features": cmd_features,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args, argv)
    except (UsageError, cfgmod.ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"gluconet: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report and exit 1
        logger.debug("traceback", exc_info=True)
        print(f"gluconet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
