import csv
import logging
from dataclasses import replace

import numpy as np
import pytest

from conftest import tiny_config
from gluconet import pipeline
from gluconet.dataio import SynthConfig, generate_synthetic
from gluconet.pipeline import (
    ExperimentConfig, build_feature_sets, load_states, patient_from_record, predict_full, run_experiment,
    save_states, train_all,
)
from gluconet.series import invert_norm
from gluconet.training import TrainingDiverged


@pytest.fixture(scope="module")
def feats(small_patient):
    return build_feature_sets(small_patient.train, small_patient.test, tiny_config())


@pytest.fixture(scope="module")
def trained(feats):
    return train_all(feats[6][0], tiny_config(), seed=0)


def perturbed(segments, amount):
    out = []
    for s in segments:
        g = s["glucose"] + amount * np.sin(np.arange(s.length) / 7.0)
        out.append(s.with_channels(glucose=g))
    return out


def assert_fs_equal(a, b):
    for name in ("lffd", "hffd", "base"):
        x, y = getattr(a, name), getattr(b, name)
        assert np.array_equal(x.inputs, y.inputs) and np.array_equal(x.targets, y.targets)
    assert np.array_equal(a.glucose_targets, b.glucose_targets)


class TestFeatures:
    @pytest.mark.parametrize("h", [1, 6, 12])
    def test_recombination_identity(self, feats, h):
        for fs in feats[h]:
            low = invert_norm(fs.lffd.targets, fs.norm_stats, "low")
            np.testing.assert_allclose(low + fs.hffd.targets, fs.glucose_targets, atol=1e-9)

    @pytest.mark.parametrize("h", [1, 6, 12])
    def test_datasets_aligned(self, feats, h):
        for fs in feats[h]:
            assert len(fs.lffd) == len(fs.hffd) == len(fs.base) == len(fs.glucose_targets)
            assert np.array_equal(fs.lffd.target_index, fs.hffd.target_index)
            assert fs.lffd.inputs.shape[1:] == (36, 3) and fs.lffd.targets.shape[1] == h

    def test_shared_channels(self, feats):
        fs = feats[6][0]
        assert np.array_equal(fs.lffd.inputs[..., 1:], fs.hffd.inputs[..., 1:])

    def test_low_targets_normalized(self, feats):
        fs = feats[1][0]
        assert abs(fs.lffd.targets.mean()) < 0.1 and abs(fs.lffd.targets.std() - 1) < 0.1

    def test_test_split_independent_of_train(self, small_patient):
        cfg = tiny_config()
        a = build_feature_sets(small_patient.train, small_patient.test, cfg, horizons=(6,))[6][1]
        b = build_feature_sets(perturbed(small_patient.train, 25.0), small_patient.test, cfg, horizons=(6,))[6][1]
        # decomposition and event channels of the test split do not see the train split
        assert np.array_equal(a.hffd.inputs[..., 0], b.hffd.inputs[..., 0])
        assert np.array_equal(a.hffd.targets, b.hffd.targets)
        assert np.array_equal(a.glucose_targets, b.glucose_targets)
        np.testing.assert_allclose(invert_norm(a.lffd.targets, a.norm_stats, "low"),
                                   invert_norm(b.lffd.targets, b.norm_stats, "low"), atol=1e-9)

    def test_train_split_independent_of_test(self, small_patient):
        cfg = tiny_config()
        a = build_feature_sets(small_patient.train, small_patient.test, cfg, horizons=(6,))[6][0]
        b = build_feature_sets(small_patient.train, perturbed(small_patient.test, 40.0), cfg, horizons=(6,))[6][0]
        assert_fs_equal(a, b)
        assert a.norm_stats == b.norm_stats

    def test_aux_channels_left_raw_when_asked(self, small_patient):
        fs = build_feature_sets(small_patient.train, small_patient.test, tiny_config(normalize_aux=False), (1,))[1][0]
        assert fs.norm_stats.scale["carbs_op"] == 1.0 and fs.lffd.inputs[..., 1].min() == 0.0

    def test_no_usable_segment(self, small_patient):
        short = [s.slice(0, 20) for s in small_patient.test]
        with pytest.raises(ValueError):
            build_feature_sets(small_patient.train, short, tiny_config())


class TestTrainPredict:
    def test_prediction_shape_and_range(self, trained, feats):
        fs = feats[6][1]
        for v in ("gluconet_kd_st", "gluconet_st", "gluconet_lt", "baseline"):
            p = predict_full(trained, fs, v)
            assert p.shape == (len(fs), 6) and np.isfinite(p).all()

    def test_additive_identity(self, trained, feats):
        fs = feats[6][1]
        student = trained.student_kd
        saved = {k: student.store[k].values.copy() for k in student.store}
        try:
            for k in student.store:
                student.store[k].values[...] = 0.0
            low = invert_norm(trained.low.predict(fs.lffd.inputs).astype(float), fs.norm_stats, "low")
            np.testing.assert_array_equal(predict_full(trained, fs, "gluconet_kd_st"), low)
        finally:
            for k, v in saved.items():
                student.store[k].values[...] = v

    def test_out_of_range_logged_not_clamped(self, trained, feats, caplog):
        fs = feats[6][1]
        low = trained.low
        b = low.store[list(low.store)[-1]]
        saved = b.values.copy()
        try:
            b.values[...] += 1e3
            with caplog.at_level(logging.WARNING, logger="gluconet.pipeline"):
                p = predict_full(trained, fs, "gluconet_kd_st")
            assert p.max() > 600 and "not clamped" in caplog.text
        finally:
            b.values[...] = saved

    def test_horizon_mismatch(self, trained, feats):
        with pytest.raises(ValueError, match="horizon"):
            predict_full(trained, feats[12][1], "gluconet_kd_st")
        with pytest.raises(ValueError, match="horizon"):
            predict_full(trained, feats[1][1], "baseline")

    def test_deterministic(self, feats, trained):
        again = train_all(feats[6][0], tiny_config(), seed=0)
        for name, hist in trained.histories.items():
            assert again.histories[name].losses == hist.losses
        assert again.student_kd.store.checksum() == trained.student_kd.store.checksum()

    @pytest.mark.filterwarnings("ignore:channel .* is constant")
    def test_constant_signal_loss_non_increasing(self):
        rec = generate_synthetic(SynthConfig(days=2, meal_hours=(), meal_carbs=(), snack_prob=0.0, basal_rate=0.0,
                                             noise_std=0.0, drift_amplitude=0.0))
        pd = patient_from_record(rec)
        cfg = tiny_config(epochs_low=6, epochs_teacher=6, kd=replace(tiny_config().kd, epochs=6), lr=1e-3)
        fs = build_feature_sets(pd.train, pd.test, cfg, (6,))[6][0]
        st = train_all(fs, cfg, seed=0)
        for name, hist in st.histories.items():
            losses = hist.losses
            assert all(b <= a * (1 + 1e-6) for a, b in zip(losses, losses[1:])), (name, losses)

    def test_states_round_trip(self, trained, feats, tmp_path):
        save_states(trained, tmp_path)
        back = load_states(tmp_path)
        fs = feats[6][1]
        for v in ("gluconet_kd_st", "baseline"):
            np.testing.assert_array_equal(predict_full(back, fs, v), predict_full(trained, fs, v))
        assert (tmp_path / "student_kd.best.glnt").exists()

    def test_variant_subset(self, feats):
        st = train_all(feats[1][0], tiny_config(), seed=1, variants=["baseline"])
        assert st.low is None and st.teacher is None and st.baseline is not None


@pytest.fixture(scope="module")
def result(small_patient, tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    cfg = tiny_config(runs=5, horizons=(1, 6, 12))
    pd = replace(small_patient, patient_id="559", cohort="2018")
    return out, run_experiment(cfg, [pd], out)


class TestExperiment:
    def rows(self, out):
        with open(out / "runs.csv", newline="") as fh:
            return list(csv.DictReader(fh))

    def test_five_rows_per_model_and_horizon(self, result):
        out, reports = result
        rows = self.rows(out)
        keys = {(r["model"], r["horizon_min"]) for r in rows}
        assert len(keys) == 4 * 3
        for k in keys:
            assert sum((r["model"], r["horizon_min"]) == k for r in rows) == 5
        assert all(len(r.runs) == 5 for r in reports)

    def test_report_files(self, result):
        out, reports = result
        assert {r.horizon for r in reports} == {5, 30, 60}
        header = (out / "table.tsv").read_text().split("\n")[0].split("\t")
        assert header[1:4] == ["RMSE Total 5", "RMSE Total 30", "RMSE Total 60"] and "R2 2018 60" in header
        with open(out / "efficiency.csv", newline="") as fh:
            eff = list(csv.DictReader(fh))
        assert len(eff) == 4 * 3 and any(r["pareto"] == "1" for r in eff)
        assert (out / "forecast_559_h30.csv").exists() and (out / "per_step.csv").exists()
        summary = (out / "summary.csv").read_text()
        assert summary.startswith("patient,cohort,horizon_min,model,params,runs,rmse")

    def test_rerun_bit_identical(self, result, small_patient, tmp_path):
        out, _ = result
        cfg = tiny_config(runs=5, horizons=(1, 6, 12))
        run_experiment(cfg, [replace(small_patient, patient_id="559", cohort="2018")], tmp_path)
        for name in ("runs.csv", "summary.csv", "table.tsv", "efficiency.csv", "forecast_559_h60.csv"):
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes()

    def test_divergence_recorded_and_skipped(self, small_patient, tmp_path, monkeypatch):
        real = pipeline.train_all
        calls = []

        def flaky(fs, config, seed, variants=None):
            calls.append(seed)
            if seed == 1:
                raise TrainingDiverged("loss is nan")
            return real(fs, config, seed, variants)

        monkeypatch.setattr(pipeline, "train_all", flaky)
        reports = run_experiment(tiny_config(runs=3, horizons=(1,)), [small_patient], tmp_path)
        rows = self.rows(tmp_path)
        assert calls == [0, 1, 2]
        assert sum(r["status"] == "diverged" for r in rows) == 4
        assert all(len(r.runs) == 2 for r in reports)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(horizons=(3,))
    with pytest.raises(ValueError):
        ExperimentConfig(split_index=5)
    with pytest.raises(ValueError):
        ExperimentConfig(variants=("nope",))
    cfg = ExperimentConfig().with_full_epochs()
    assert (cfg.epochs_low, cfg.epochs_teacher, cfg.kd.epochs) == (300, 500, 500)
