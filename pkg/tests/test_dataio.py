import logging
from dataclasses import replace
from datetime import datetime, timedelta

import numpy as np
import pytest

from gluconet.dataio import (
    CSV_HEADER, CsvFormatError, OHIO_COHORTS, PatientRecord, SynthConfig, events_from_series, generate_synthetic,
    load_csv, load_ohio_xml, record_to_series, write_csv,
)

HEADER = ",".join(CSV_HEADER)
T0 = datetime(2024, 3, 1, 8, 0)


def write(tmp_path, text, name="p1.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


QUIET = dict(meal_hours=(), meal_carbs=(), snack_prob=0.0, basal_rate=0.0, noise_std=0.0)


class TestCsv:
    def test_three_rows(self, tmp_path):
        rec = load_csv(write(tmp_path, f"{HEADER}\n"
                                       "2024-03-01T08:00:00,110,,,\n"
                                       "2024-03-01T08:05:00,112,30,2.5,\n"
                                       "2024-03-01T08:10:00,115,,,0.9\n"))
        assert rec.patient_id == "p1"
        assert rec.counts() == {"glucose": 3, "meals": 1, "boluses": 1, "basal": 1}
        assert rec.meals == [(T0 + timedelta(minutes=5), 30.0)]

    def test_empty_carbs_cell_no_meal(self, tmp_path):
        rec = load_csv(write(tmp_path, f"{HEADER}\n2024-03-01T08:00:00,110,,1,\n"))
        assert rec.meals == [] and rec.boluses == [(T0, 1.0)]

    def test_timestamp_regression_names_line(self, tmp_path):
        p = write(tmp_path, f"{HEADER}\n2024-03-01T08:05:00,110,,,\n2024-03-01T08:00:00,111,,,\n")
        with pytest.raises(CsvFormatError, match="line 3"):
            load_csv(p)

    def test_bad_number_names_line_and_column(self, tmp_path):
        p = write(tmp_path, f"{HEADER}\n2024-03-01T08:00:00,110,,,\n2024-03-01T08:05:00,abc,,,\n")
        with pytest.raises(CsvFormatError, match="line 3, column 'glucose'"):
            load_csv(p)

    @pytest.mark.parametrize("text", [
        "time,glucose,carbs,bolus,basal_rate\n",
        "timestamp,glucose,carbs,bolus\n",
        "",
    ])
    def test_bad_header(self, tmp_path, text):
        with pytest.raises(CsvFormatError):
            load_csv(write(tmp_path, text))

    def test_wrong_column_count(self, tmp_path):
        with pytest.raises(CsvFormatError, match="line 2"):
            load_csv(write(tmp_path, f"{HEADER}\n2024-03-01T08:00:00,110,,\n"))

    def test_negative_carbs(self, tmp_path):
        with pytest.raises(CsvFormatError, match="carbs"):
            load_csv(write(tmp_path, f"{HEADER}\n2024-03-01T08:00:00,110,-5,,\n"))

    def test_round_trip_text(self, tmp_path):
        text = (f"{HEADER}\n"
                "2024-03-01T08:00:00,110,,,0.8\n"
                "2024-03-01T08:05:00,112.5,45,3.5,\n"
                "2024-03-01T08:10:00,118,,,1.25\n")
        src = write(tmp_path, text)
        write_csv(tmp_path / "out.csv", load_csv(src))
        assert (tmp_path / "out.csv").read_text() == text

    def test_round_trip_synthetic(self, tmp_path):
        rec = generate_synthetic(SynthConfig(days=2, seed=4))
        write_csv(tmp_path / "a.csv", rec)
        back = load_csv(tmp_path / "a.csv", patient_id=rec.patient_id)
        assert back == rec
        write_csv(tmp_path / "b.csv", back)
        assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()

    def test_counts_logged(self, tmp_path, caplog):
        with caplog.at_level(logging.INFO, logger="gluconet.dataio"):
            load_csv(write(tmp_path, f"{HEADER}\n2024-03-01T08:00:00,110,20,,\n"))
        assert "'glucose': 1" in caplog.text and "'meals': 1" in caplog.text


OHIO = """<?xml version="1.0"?>
<patient id="559" weight="99" insulin_type="Novalog">
  <glucose_level>
    <event ts="01-03-2024 08:00:00" value="110"/>
    <event ts="01-03-2024 08:05:00" value="114"/>
  </glucose_level>
  <basal>
    <event ts="01-03-2024 00:00:00" value="0.8"/>
  </basal>
  <temp_basal>
    <event ts_begin="01-03-2024 08:02:00" ts_end="01-03-2024 08:30:00" value="0.0"/>
  </temp_basal>
  <bolus>
    <event ts_begin="01-03-2024 08:00:00" ts_end="01-03-2024 08:00:00" type="normal" dose="3.2"/>
  </bolus>
  <finger_stick>
    <event ts="01-03-2024 08:01:00" value="120"/>
  </finger_stick>
  <exercise>
    <event ts="01-03-2024 09:00:00" intensity="5"/>
    <event ts="01-03-2024 10:00:00" intensity="3"/>
  </exercise>
</patient>
"""


class TestOhioXml:
    def test_minimal_file(self, tmp_path, caplog):
        p = tmp_path / "559-ws-training.xml"
        p.write_text(OHIO)
        with caplog.at_level(logging.WARNING, logger="gluconet.dataio"):
            rec = load_ohio_xml(p)
        assert rec.patient_id == "559"
        assert rec.glucose == [(T0, 110.0), (T0 + timedelta(minutes=5), 114.0)]
        assert rec.meals == []
        assert rec.boluses == [(T0, 3.2)]
        assert rec.basal == [(datetime(2024, 3, 1), 0.8), (T0 + timedelta(minutes=2), 0.0),
                             (T0 + timedelta(minutes=30), 0.8)]
        assert "'finger_stick': 1" in caplog.text and "'exercise': 2" in caplog.text

    def test_meal_section(self, tmp_path):
        text = OHIO.replace("<bolus>", '<meal><event ts="01-03-2024 08:00:00" type="Breakfast" carbs="40"/></meal>\n  <bolus>')
        p = tmp_path / "x.xml"
        p.write_text(text)
        assert load_ohio_xml(p).meals == [(T0, 40.0)]

    def test_malformed(self, tmp_path):
        p = tmp_path / "bad.xml"
        p.write_text("<patient><glucose_level>")
        with pytest.raises(ValueError, match="malformed"):
            load_ohio_xml(p)

    def test_cohort_map(self):
        assert len(OHIO_COHORTS) == 12
        assert sorted(OHIO_COHORTS.values()).count("2018") == 6


class TestGrid:
    def test_basal_becomes_micro_boluses(self):
        rec = PatientRecord("p", glucose=[(T0 + k * timedelta(minutes=5), 100.0) for k in range(4)],
                            boluses=[(T0, 2.0)], basal=[(T0, 1.2)])
        (seg,) = record_to_series(rec)
        np.testing.assert_allclose(seg["bolus"], [2.1, 0.1, 0.1, 0.1])

    def test_long_gap_splits(self):
        times = [T0 + k * timedelta(minutes=5) for k in list(range(10)) + list(range(20, 30))]
        segs = record_to_series(PatientRecord("p", glucose=[(t, 100.0) for t in times]))
        assert [s.length for s in segs] == [10, 10]

    def test_events_recovered(self):
        rec = PatientRecord("p", glucose=[(T0 + k * timedelta(minutes=5), 100.0) for k in range(4)],
                            meals=[(T0 + timedelta(minutes=6), 30.0)])
        (seg,) = record_to_series(rec)
        (ev,) = events_from_series(seg)
        assert ev.kind == "meal" and ev.magnitude == 30.0 and ev.time == T0 + timedelta(minutes=5)

    def test_no_glucose(self):
        with pytest.raises(ValueError):
            record_to_series(PatientRecord("p"))


class TestSynthetic:
    def test_deterministic(self):
        assert generate_synthetic(SynthConfig(days=2, seed=7)) == generate_synthetic(SynthConfig(days=2, seed=7))
        assert generate_synthetic(SynthConfig(days=2, seed=7)) != generate_synthetic(SynthConfig(days=2, seed=8))

    @pytest.mark.parametrize("seed", range(5))
    def test_physiologic_range(self, seed):
        g = np.array([v for _, v in generate_synthetic(SynthConfig(seed=seed)).glucose])
        assert g.min() >= 40 and g.max() <= 400
        assert len(g) == 14 * 288

    def test_quiet_trace_is_constant_plus_drift(self):
        cfg = SynthConfig(days=2, **QUIET)
        rec = generate_synthetic(cfg)
        assert rec.meals == [] and rec.boluses == [] and rec.basal == []
        g = np.array([v for _, v in rec.glucose])
        hours = np.arange(len(g)) * 5 / 60
        np.testing.assert_allclose(g, 120 + 15 * np.sin(2 * np.pi * hours / 24), atol=0.05)

    def test_meal_raises_glucose_in_window(self):
        quiet = SynthConfig(days=1, **QUIET)
        meal = replace(quiet, extra_meals=((600.0, 50.0),))
        g0 = np.array([v for _, v in generate_synthetic(quiet).glucose])
        g1 = np.array([v for _, v in generate_synthetic(meal).glucose])
        k = 600 // 5
        after = np.arange(k + 4, k + 37)  # (15, 180] minutes after the meal
        assert np.all(g1[after] > g0[after])
        assert np.array_equal(g1[: k + 1], g0[: k + 1])

    def test_invalid(self):
        with pytest.raises(ValueError):
            SynthConfig(days=0)
        with pytest.raises(ValueError):
            SynthConfig(noise_std=-1)
