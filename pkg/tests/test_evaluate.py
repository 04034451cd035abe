import numpy as np
import pytest

from voyagecast.evaluate import (
    EvalError,
    PredictionSet,
    aggregate,
    attention_export,
    build_report,
    collate_predictions,
    grouped_report,
    normalized_segment_mae,
    ols_with_ci,
    per_step_profile,
    record_errors,
    segment_metrics,
    sensitivity_regression,
)
from voyagecast.estimator import ConstantForecaster


def make_prediction_set(rng, n_segments=8, records_per_segment=25, horizon=6):
    """Random synthetic prediction set with varying per-record coverage."""
    ps = PredictionSet(horizon=horizon)
    for s in range(n_segments):
        segment = (f"S{s}", f"E{s}")
        for r in range(records_per_segment):
            window = 100 + r
            y = float(rng.uniform(4.0, 90.0))
            coverage = int(rng.integers(1, horizon + 1))
            steps = rng.choice(horizon, size=coverage, replace=False) + 1
            for k in steps:
                ps.add(segment, window, y, int(k), y + float(rng.normal(0, 5)))
    return ps


class TestCollation:
    def test_boundary_record_has_single_prediction(self, small_pipeline):
        p = small_pipeline
        model = ConstantForecaster(10.0, p["horizon"])
        ps = collate_predictions(model, p["test"], horizon=p["horizon"])
        coverages = [r.coverage for r in ps.records.values()]
        assert min(coverages) >= 1
        assert max(coverages) == p["horizon"]

    def test_coverage_matches_anchor_enumeration_oracle(self, small_pipeline):
        p = small_pipeline
        model = ConstantForecaster(10.0, p["horizon"])
        ps = collate_predictions(model, p["test"], horizon=p["horizon"])
        # oracle: enumerate (sample, masked step) pairs independently
        expected = {}
        for s in p["test"]:
            for k in range(p["horizon"]):
                if s.mask[k] > 0:
                    expected.setdefault((s.segment, s.anchor + k), set()).add(k + 1)
        assert set(ps.records) == set(expected)
        for key, rec in ps.records.items():
            assert set(rec.by_step) == expected[key]

    def test_predictions_clamped_at_floor(self, small_pipeline):
        p = small_pipeline
        model = ConstantForecaster(-5.0, p["horizon"])
        ps = collate_predictions(model, p["test"], horizon=p["horizon"])
        values = [v for r in ps.records.values() for v in r.by_step.values()]
        assert all(v == 0.1 for v in values)


class TestRecordAndSegmentErrors:
    def test_direct_substitution(self):
        ps = PredictionSet(horizon=2)
        ps.add(("A", "B"), 5, 10.0, 1, 8.0)
        ps.add(("A", "B"), 5, 10.0, 2, 12.0)
        mae, mape = record_errors(ps.records[(("A", "B"), 5)])
        assert mae == pytest.approx(2.0)
        assert mape == pytest.approx(0.2)

    def test_perfect_predictions(self):
        ps = PredictionSet(horizon=1)
        ps.add(("A", "B"), 5, 10.0, 1, 10.0)
        assert record_errors(ps.records[(("A", "B"), 5)]) == (0.0, 0.0)

    def test_matches_scalar_loop_oracle(self, rng):
        ps = make_prediction_set(rng)
        rows = segment_metrics(ps)
        # independent plain-python recomputation
        per_seg = {}
        for (segment, window), rec in ps.records.items():
            maes = [abs(rec.y_true - p) for p in rec.by_step.values()]
            mapes = [e / rec.y_true for e in maes]
            per_seg.setdefault(segment, []).append(
                (sum(maes) / len(maes), sum(mapes) / len(mapes)))
        for row in rows:
            pairs = per_seg[row.segment]
            assert row.v == len(pairs)
            assert abs(row.mae - sum(p[0] for p in pairs) / len(pairs)) < 1e-12
            assert abs(row.mape - sum(p[1] for p in pairs) / len(pairs)) < 1e-12


class TestAggregate:
    def rows(self):
        from voyagecast.evaluate import SegmentMetrics

        return [SegmentMetrics(("A", "B"), 2.0, 0.2, 1),
                SegmentMetrics(("C", "D"), 4.0, 0.4, 3)]

    def test_direct_substitution(self):
        rows = self.rows()
        assert aggregate(rows, "unweighted") == (pytest.approx(3.0), pytest.approx(0.3))
        assert aggregate(rows, "weighted") == (pytest.approx(3.5), pytest.approx(0.35))

    def test_single_segment_modes_agree(self):
        rows = self.rows()[:1]
        assert aggregate(rows, "weighted") == aggregate(rows, "unweighted")

    def test_equal_weights_agree(self, rng):
        from voyagecast.evaluate import SegmentMetrics

        rows = [SegmentMetrics((f"P{i}", "Q"), float(rng.uniform(1, 5)),
                               float(rng.uniform(0.1, 0.5)), 7) for i in range(5)]
        w = aggregate(rows, "weighted")
        u = aggregate(rows, "unweighted")
        assert w[0] == pytest.approx(u[0]) and w[1] == pytest.approx(u[1])

    def test_empty_scope_rejected(self):
        with pytest.raises(EvalError):
            aggregate(self.rows(), "weighted", scope=set())

    def test_weighted_matches_oracle(self, rng):
        ps = make_prediction_set(rng)
        rows = segment_metrics(ps)
        mae, mape = aggregate(rows, "weighted")
        num = sum(r.mae * r.v for r in rows)
        den = sum(r.v for r in rows)
        assert abs(mae - num / den) < 1e-12


class TestGroupedReport:
    def test_bin_structure(self, rng):
        from voyagecast.evaluate import SegmentMetrics

        rows = [
            SegmentMetrics(("A", "B"), 1.0, 0.1, 80),    # <24h, 75-150
            SegmentMetrics(("C", "D"), 2.0, 0.2, 200),   # 24-72h, 151-500
            SegmentMetrics(("E", "F"), 3.0, 0.3, 700),   # 72-168h, 501-1000
            SegmentMetrics(("G", "H"), 4.0, 0.4, 2000),  # 168-504h, 1001-5000
            SegmentMetrics(("I", "J"), 5.0, 0.5, 10),    # other (count 10)
        ]
        avg = {("A", "B"): 10.0, ("C", "D"): 50.0, ("E", "F"): 100.0,
               ("G", "H"): 200.0, ("I", "J"): 600.0}
        cnt = {s.segment: s.v for s in rows}
        groups = grouped_report(rows, avg, cnt)
        dur_bins = [g["bin"] for g in groups["by_avg_duration"]]
        assert dur_bins == ["<24h", "24-72h", "72-168h", "168-504h", "other"]
        cnt_bins = [g["bin"] for g in groups["by_record_count"]]
        assert cnt_bins == ["75-150", "151-500", "501-1000", "1001-5000", "other"]

    def test_bin_edges_half_open_for_duration(self):
        from voyagecast.evaluate import SegmentMetrics

        rows = [SegmentMetrics(("A", "B"), 1.0, 0.1, 100)]
        groups = grouped_report(rows, {("A", "B"): 24.0}, {("A", "B"): 100})
        assert groups["by_avg_duration"][0]["bin"] == "24-72h"


class TestPerStepProfile:
    def test_direct_substitution(self):
        ps = PredictionSet(horizon=2)
        ps.add(("A", "B"), 5, 10.0, 1, 9.0)
        ps.add(("A", "B"), 5, 10.0, 2, 12.0)
        mae, mape = per_step_profile(ps)
        np.testing.assert_allclose(mae, [1.0, 2.0])
        np.testing.assert_allclose(mape, [0.1, 0.2])

    def test_partial_records_excluded(self):
        ps = PredictionSet(horizon=2)
        ps.add(("A", "B"), 5, 10.0, 1, 9.0)  # coverage 1 < horizon
        with pytest.warns(UserWarning, match="no record"):
            mae, mape = per_step_profile(ps)
        assert len(mae) == 0

    def test_removing_partial_record_never_changes_profile(self, rng):
        ps = make_prediction_set(rng)
        mae_a, mape_a = per_step_profile(ps)
        partial_keys = [k for k, r in ps.records.items() if r.coverage < ps.horizon]
        assert partial_keys, "fixture should contain partially covered records"
        del ps.records[partial_keys[0]]
        mae_b, mape_b = per_step_profile(ps)
        np.testing.assert_array_equal(mae_a, mae_b)
        np.testing.assert_array_equal(mape_a, mape_b)

    def test_matches_enumeration_oracle(self, rng):
        ps = make_prediction_set(rng)
        mae, mape = per_step_profile(ps)
        full = [r for r in ps.records.values() if r.coverage == ps.horizon]
        for k in range(1, ps.horizon + 1):
            vals = [abs(r.y_true - r.by_step[k]) for r in full]
            assert abs(mae[k - 1] - sum(vals) / len(vals)) < 1e-12


class TestSensitivityRegression:
    def test_exact_line_zero_width_ci(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        res = ols_with_ci(x, 2.0 * x + 1.0)
        assert res.slope == pytest.approx(2.0, abs=1e-12)
        assert res.intercept == pytest.approx(1.0, abs=1e-12)
        assert res.ci_high - res.ci_low == pytest.approx(0.0, abs=1e-12)

    def test_constant_response_zero_slope(self):
        res = ols_with_ci([1, 2, 3, 4], [5.0, 5.0, 5.0, 5.0])
        assert res.slope == pytest.approx(0.0, abs=1e-15)

    def test_matches_normal_equations_oracle(self, rng):
        x = rng.uniform(0, 100, 40)
        y = 0.3 * x + rng.normal(0, 5, 40)
        res = ols_with_ci(x, y)
        # closed-form normal equations
        X = np.stack([np.ones_like(x), x], axis=1)
        beta = np.linalg.solve(X.T @ X, X.T @ y)
        assert abs(res.intercept - beta[0]) < 1e-10
        assert abs(res.slope - beta[1]) < 1e-10
        resid = y - X @ beta
        sigma2 = (resid**2).sum() / (len(x) - 2)
        sxx = ((x - x.mean()) ** 2).sum()
        from scipy import stats as sps

        half = sps.t.ppf(0.975, len(x) - 2) * (sigma2 / sxx) ** 0.5
        assert abs((res.ci_high - res.ci_low) / 2 - half) < 1e-10

    def test_zero_variance_regressor_rejected(self):
        with pytest.raises(EvalError, match="zero variance"):
            ols_with_ci([2, 2, 2], [1, 2, 3])

    def test_too_few_points_rejected(self):
        with pytest.raises(EvalError):
            ols_with_ci([1, 2], [1, 2])

    def test_normalized_mae_is_scale_free(self, rng):
        ps = make_prediction_set(rng, n_segments=4)
        norm = normalized_segment_mae(ps)
        # scaling one segment's durations and predictions by 10 leaves its
        # normalized error unchanged
        scaled = PredictionSet(horizon=ps.horizon)
        for (segment, window), rec in ps.records.items():
            factor = 10.0 if segment == ("S0", "E0") else 1.0
            for k, v in rec.by_step.items():
                scaled.add(segment, window, rec.y_true * factor, k, v * factor)
        norm2 = normalized_segment_mae(scaled)
        assert norm[("S0", "E0")] == pytest.approx(norm2[("S0", "E0")])

    def test_end_to_end_regression(self, rng):
        ps = make_prediction_set(rng)
        norm = normalized_segment_mae(ps)
        counts = {seg: int(rng.integers(80, 2000)) for seg in norm}
        res = sensitivity_regression(norm, counts)
        assert res.n == len(norm)


class TestReportAndExport:
    def test_build_report_round_trip(self, rng, tmp_path):
        from voyagecast.evaluate import write_report_files

        ps = make_prediction_set(rng)
        avg = {seg: 30.0 for seg in ps.by_segment()}
        cnt = {seg: 100 for seg in ps.by_segment()}
        report = build_report(ps, avg, cnt)
        assert report.weighted_mae > 0
        write_report_files(report, tmp_path)
        assert (tmp_path / "metrics.json").exists()
        assert (tmp_path / "per_segment.csv").exists()
        assert (tmp_path / "per_step.csv").exists()
        assert (tmp_path / "groups.csv").exists()

    def test_attention_export_properties(self, small_pipeline, tmp_path):
        from voyagecast.estimator import DurationForecaster

        p = small_pipeline
        est = DurationForecaster(d_emb=4, d_model=8, n_head=2, n_block=1, d_temp=8,
                                 lookback=p["lookback"], horizon=p["horizon"],
                                 batch_size=64, max_epochs=1, seed=5)
        est.fit(p["train"][:100], p["val"][:20], vocab=p["vocab"])
        paths = attention_export(est, p["test"][0], tmp_path)
        assert len(paths) == 1 * 2 + 1  # blocks*heads + mean
        for path in paths:
            matrix = np.loadtxt(path, delimiter=",")
            np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-9)
            n = matrix.shape[0]
            upper = matrix[np.triu_indices(n, k=1)]
            np.testing.assert_array_equal(upper, 0.0)
