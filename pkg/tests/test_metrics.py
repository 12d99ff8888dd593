import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gluconet.metrics import (
    ForecastReport, compute_metrics, efficiency_table, format_table, per_step_metrics, write_efficiency,
)


def metrics_by_loops(y, p):
    """Second implementation with plain Python sums."""
    ys = [float(v) for v in np.ravel(y)]
    ps = [float(v) for v in np.ravel(p)]
    n = len(ys)
    mean = sum(ys) / n
    ss_res = sum((a - b) ** 2 for a, b in zip(ys, ps))
    ss_tot = sum((a - mean) ** 2 for a in ys)
    return math.sqrt(ss_res / n), sum(abs(a - b) for a, b in zip(ys, ps)) / n, 1 - ss_res / ss_tot


finite = st.floats(-500, 500, allow_nan=False)


class TestComputeMetrics:
    def test_perfect(self):
        y = np.array([[100.0, 120.0], [90.0, 150.0]])
        assert compute_metrics(y, y) == (0.0, 0.0, 1.0)

    def test_mean_prediction(self):
        rmse, mae, r2 = compute_metrics([100, 120], [110, 110])
        assert (rmse, mae, r2) == (10.0, 10.0, 0.0)

    def test_partial_fit(self):
        rmse, mae, r2 = compute_metrics([100, 120], [100, 110])
        assert rmse == pytest.approx(math.sqrt(50), abs=1e-12)
        # SS_res = 0 + 100, SS_tot = 100 + 100
        assert mae == 5.0 and r2 == pytest.approx(0.5, abs=1e-12)

    def test_constant_actuals_give_nan_r2(self):
        rmse, mae, r2 = compute_metrics([5.0, 5.0, 5.0], [4.0, 5.0, 6.0])
        assert math.isnan(r2) and rmse > 0 and mae > 0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            compute_metrics(np.zeros((3, 2)), np.zeros((2, 3)))

    def test_too_few(self):
        with pytest.raises(ValueError):
            compute_metrics([1.0], [1.0])

    def test_pools_all_steps(self):
        y = np.array([[0.0, 0.0], [0.0, 0.0]])
        p = np.array([[0.0, 2.0], [0.0, 2.0]])
        assert compute_metrics(y, p)[0] == pytest.approx(math.sqrt(2.0))

    def test_per_step(self):
        y = np.array([[1.0, 10.0], [3.0, 20.0], [5.0, 30.0]])
        p = y + np.array([0.0, 1.0])
        steps = per_step_metrics(y, p)
        assert steps[0] == (0.0, 0.0, 1.0)
        assert steps[1][0] == pytest.approx(1.0)

    @given(arrays(float, (6, 3), elements=finite), arrays(float, (6, 3), elements=finite), finite)
    def test_translation_invariance(self, y, p, c):
        y = y + np.arange(18).reshape(6, 3)  # guarantees non-zero variance
        a = compute_metrics(y, p)
        b = compute_metrics(y + c, p + c)
        np.testing.assert_allclose(a, b, rtol=1e-7, atol=1e-6)

    @given(arrays(float, (5, 4), elements=finite), arrays(float, (5, 4), elements=finite))
    def test_matches_second_implementation(self, y, p):
        y = y + np.arange(20).reshape(5, 4)
        np.testing.assert_allclose(compute_metrics(y, p), metrics_by_loops(y, p), rtol=1e-9, atol=1e-9)

    @given(arrays(float, (4, 3), elements=finite), arrays(float, (4, 3), elements=finite))
    def test_bounds(self, y, p):
        y = y + np.arange(12).reshape(4, 3)
        rmse, mae, r2 = compute_metrics(y, p)
        assert rmse >= 0 and mae >= 0 and r2 <= 1
        assert rmse >= mae - 1e-9  # quadratic mean dominates the arithmetic mean


class TestReports:
    def test_invalid_triple_rejected(self):
        with pytest.raises(ValueError):
            ForecastReport("m", "p", 30, 10, [(-1.0, 0.0, 0.5)])
        with pytest.raises(ValueError):
            ForecastReport("m", "p", 30, 10, [(1.0, 0.5, 1.5)])

    def test_means_skip_nan(self):
        r = ForecastReport("m", "p", 30, 10, [(1.0, 1.0, float("nan")), (3.0, 2.0, 0.5)])
        assert r.rmse == 2.0 and r.mae == 1.5 and r.r2 == 0.5 and r.rmse_std == 1.0

    def test_single_report_is_pareto(self):
        (pt,) = efficiency_table([ForecastReport("a", "p", 30, 100, [(5.0, 4.0, 0.9)])])
        assert pt.pareto and pt.params == 100

    def test_dominated_flagged(self):
        pts = efficiency_table([
            ForecastReport("big", "p", 30, 200, [(6.0, 4.0, 0.9)]),
            ForecastReport("small", "p", 30, 100, [(5.0, 4.0, 0.9)]),
            ForecastReport("tiny", "p", 30, 50, [(7.0, 4.0, 0.9)]),
        ])
        assert [p.model_id for p in pts] == ["tiny", "small", "big"]
        assert {p.model_id: p.pareto for p in pts} == {"tiny": True, "small": True, "big": False}

    def test_student_listed_before_teacher(self):
        from gluconet.models import TransformerConfig, build_transformer, count_params
        s = count_params(build_transformer(TransformerConfig.student(6)))
        t = count_params(build_transformer(TransformerConfig.teacher(6)))
        pts = efficiency_table([ForecastReport("teacher", "p", 30, t, [(5.0, 4.0, 0.9)]),
                                ForecastReport("student", "p", 30, s, [(5.5, 4.0, 0.9)])])
        assert [p.model_id for p in pts] == ["student", "teacher"] and pts[0].params < pts[1].params

    def test_efficiency_file(self, tmp_path):
        write_efficiency(tmp_path / "e.csv", efficiency_table([ForecastReport("a", "p", 30, 9, [(1.5, 1.0, 0.2)])]))
        assert (tmp_path / "e.csv").read_text() == "model,params,rmse,pareto\na,9,1.5,1\n"

    def test_table_structure(self):
        reports = [
            ForecastReport(m, pid, h, 10, [(rmse + h / 10, 1.0, 0.9)])
            for m, rmse in (("GlucoNet+KD(ST)", 5.0), ("Baseline", 8.0))
            for pid in ("559", "540")
            for h in (5, 30, 60)
        ]
        text = format_table(reports, {"559": "2018", "540": "2020"})
        lines = text.strip().split("\n")
        header = lines[0].split("\t")
        assert len(header) == 1 + 3 * 3 * 3
        assert header[1:4] == ["RMSE Total 5", "RMSE Total 30", "RMSE Total 60"]
        assert header[4] == "RMSE 2018 5" and header[7] == "RMSE 2020 5" and header[10] == "MAE Total 5"
        rows = [l.split("\t") for l in lines[1:]]
        assert [r[0] for r in rows] == ["GlucoNet+KD(ST)", "Baseline"]
        assert rows[0][1:4] == ["5.50", "8.00", "11.00"]

    def test_table_missing_cells(self):
        text = format_table([ForecastReport("m", "p", 30, 1, [(1.0, 1.0, 0.5)])])
        assert text.split("\n")[1].split("\t")[1:4] == ["-", "1.00", "-"]
