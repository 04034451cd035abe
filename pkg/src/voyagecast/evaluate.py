"""Evaluation protocol: multi-anchor prediction collation, record/segment/
aggregate error metrics, per-step profiles, grouped reports, count-vs-error
sensitivity regression, attention export and the ablation suite.

A ground-truth record in window t is reachable from up to ``horizon``
anchors, each contributing one prediction at a distinct future step k; the
record-level error averages over all available predictions. Segment errors
average record errors; aggregates average segment errors, optionally
weighted by per-segment record counts.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .estimator import ABLATIONS, DurationForecaster, training_mean_duration

PREDICTION_FLOOR_HOURS = 0.1

DURATION_BINS = [("<24h", 0.0, 24.0), ("24-72h", 24.0, 72.0),
                 ("72-168h", 72.0, 168.0), ("168-504h", 168.0, 504.0)]
COUNT_BINS = [("75-150", 75, 150), ("151-500", 151, 500),
              ("501-1000", 501, 1000), ("1001-5000", 1001, 5000)]


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# prediction collation


@dataclass
class RecordPredictions:
    """All predictions issued for one ground-truth record."""

    segment: tuple
    window: int
    y_true: float
    by_step: dict = field(default_factory=dict)  # future step k -> prediction

    @property
    def coverage(self):
        return len(self.by_step)


@dataclass
class PredictionSet:
    horizon: int
    records: dict = field(default_factory=dict)  # (segment, window) -> RecordPredictions

    def add(self, segment, window, y_true, step, y_hat):
        key = (segment, window)
        rec = self.records.get(key)
        if rec is None:
            rec = self.records[key] = RecordPredictions(segment, window, y_true)
        rec.by_step[step] = y_hat

    def by_segment(self):
        out = {}
        for rec in self.records.values():
            out.setdefault(rec.segment, []).append(rec)
        return out


def collate_predictions(model, samples, horizon: int | None = None,
                        clamp_floor: float = PREDICTION_FLOOR_HOURS) -> PredictionSet:
    """Route every masked-in (anchor, step) prediction to its ground-truth
    record. Predictions are clamped below so later MAPE terms cannot blow
    up on a near-zero output."""
    if horizon is None:
        horizon = getattr(model, "horizon")
    preds = model.predict(samples) if samples else np.zeros((0, horizon))
    ps = PredictionSet(horizon=horizon)
    for sample, row in zip(samples, preds):
        observed = np.flatnonzero(sample.mask > 0)
        for j in observed:
            ps.add(
                segment=sample.segment,
                window=sample.anchor + int(j),
                y_true=float(sample.y_target[j]),
                step=int(j) + 1,
                y_hat=max(float(row[j]), clamp_floor),
            )
    return ps


# ---------------------------------------------------------------------------
# record / segment / aggregate errors


@dataclass
class SegmentMetrics:
    segment: tuple
    mae: float
    mape: float
    v: int  # number of test records on the segment


def record_errors(rec: RecordPredictions):
    if rec.coverage < 1:
        raise EvalError(f"record {rec.segment}@{rec.window} has no predictions")
    errs = np.array([abs(rec.y_true - p) for p in rec.by_step.values()])
    return float(errs.mean()), float((errs / rec.y_true).mean())


def segment_metrics(ps: PredictionSet) -> list:
    """Per-segment record-averaged MAE/MAPE; records with non-positive
    ground truth are excluded with a warning."""
    rows = []
    groups = ps.by_segment()
    for segment in sorted(groups):
        recs = groups[segment]
        kept = [r for r in recs if r.y_true > 0]
        if len(kept) < len(recs):
            warnings.warn(f"segment {segment}: dropped {len(recs) - len(kept)} "
                          "records with non-positive ground truth")
        if not kept:
            continue
        maes, mapes = zip(*(record_errors(r) for r in kept))
        rows.append(SegmentMetrics(segment=segment, mae=float(np.mean(maes)),
                                   mape=float(np.mean(mapes)), v=len(kept)))
    return rows


def aggregate(rows, mode: str = "weighted", scope=None):
    """(MAE, MAPE) over a segment subset; ``weighted`` weights each segment
    by its record count, ``unweighted`` is the plain mean."""
    if scope is not None:
        rows = [r for r in rows if r.segment in scope]
    if not rows:
        raise EvalError("aggregate over an empty segment set")
    mae = np.array([r.mae for r in rows])
    mape = np.array([r.mape for r in rows])
    if mode == "unweighted":
        return float(mae.mean()), float(mape.mean())
    if mode == "weighted":
        v = np.array([r.v for r in rows], dtype=np.float64)
        return float((mae * v).sum() / v.sum()), float((mape * v).sum() / v.sum())
    raise EvalError(f"unknown aggregation mode {mode!r}")


def grouped_report(rows, segment_avg_duration: dict, segment_record_count: dict):
    """Aggregates binned by segment average duration (half-open edges) and by
    record count (inclusive integer ranges); segments outside every bin land
    in an 'other' bucket rather than being dropped."""

    def assemble(bins, key_of, inclusive):
        def in_bin(value, lo, hi):
            return lo <= value <= hi if inclusive else lo <= value < hi

        def row_entry(label, members):
            mae, mape = aggregate(members, "weighted")
            return {"bin": label, "n_segments": len(members),
                    "records": int(sum(r.v for r in members)),
                    "mae": mae, "mape": mape}

        out, covered = [], set()
        for label, lo, hi in bins:
            members = [r for r in rows if in_bin(key_of(r.segment), lo, hi)]
            covered.update(r.segment for r in members)
            if members:
                out.append(row_entry(label, members))
        leftovers = [r for r in rows if r.segment not in covered]
        if leftovers:
            out.append(row_entry("other", leftovers))
        return out

    return {
        "by_avg_duration": assemble(
            DURATION_BINS, lambda s: segment_avg_duration[s], inclusive=False),
        "by_record_count": assemble(
            COUNT_BINS, lambda s: segment_record_count[s], inclusive=True),
    }


def per_step_profile(ps: PredictionSet, horizon: int | None = None):
    """MAE(k), MAPE(k) over records covered at every future step.

    Partially covered records are excluded entirely, so removing one never
    changes the profile. Returns empty arrays (with a warning) when no
    record has full coverage.
    """
    horizon = horizon or ps.horizon
    full = [r for r in ps.records.values() if r.coverage == horizon]
    if not full:
        warnings.warn("per-step profile: no record is covered at every step")
        return np.zeros(0), np.zeros(0)
    mae = np.zeros(horizon)
    mape = np.zeros(horizon)
    for k in range(1, horizon + 1):
        errs = np.array([abs(r.y_true - r.by_step[k]) for r in full])
        rel = np.array([abs(r.y_true - r.by_step[k]) / r.y_true for r in full])
        mae[k - 1] = errs.mean()
        mape[k - 1] = rel.mean()
    return mae, mape


# ---------------------------------------------------------------------------
# sample-size sensitivity regression


@dataclass
class RegressionResult:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    stderr: float
    n: int


def ols_with_ci(x, y, confidence: float = 0.95) -> RegressionResult:
    """Ordinary least squares with a t-based confidence interval on the
    slope (n - 2 degrees of freedom)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 3:
        raise EvalError(f"regression needs >= 3 points, got {len(x)}")
    sxx = float(((x - x.mean()) ** 2).sum())
    if sxx == 0.0:
        raise EvalError("zero variance in the regressor")
    slope = float(((x - x.mean()) * (y - y.mean())).sum() / sxx)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    dof = len(x) - 2
    sigma2 = float((resid**2).sum()) / dof
    stderr = (sigma2 / sxx) ** 0.5
    tq = float(sps.t.ppf(0.5 + confidence / 2.0, dof))
    return RegressionResult(
        slope=slope, intercept=intercept,
        ci_low=slope - tq * stderr, ci_high=slope + tq * stderr,
        stderr=stderr, n=len(x),
    )


def normalized_segment_mae(ps: PredictionSet) -> dict:
    """Per-segment MAE after z-scoring targets and predictions with the
    segment's own ground-truth mean/std; zero-spread segments are skipped."""
    out = {}
    for segment, recs in sorted(ps.by_segment().items()):
        ys = np.array([r.y_true for r in recs])
        sigma = float(ys.std())
        if sigma == 0.0:
            warnings.warn(f"segment {segment}: zero duration spread, skipped in "
                          "the sensitivity regression")
            continue
        maes = [record_errors(r)[0] / sigma for r in recs]
        out[segment] = float(np.mean(maes))
    return out


def sensitivity_regression(normalized_mae: dict, record_counts: dict) -> RegressionResult:
    """OLS of per-segment normalized MAE on per-segment record counts."""
    segments = sorted(normalized_mae)
    x = [record_counts[s] for s in segments]
    y = [normalized_mae[s] for s in segments]
    return ols_with_ci(x, y)


# ---------------------------------------------------------------------------
# attention export


def attention_export(model, sample, out_dir) -> list:
    """Write per-block, per-head attention matrices plus their average as
    CSV heatmaps (rows: query step, columns: key step). Returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    maps = model.attention_maps(sample)
    paths = []
    all_maps = []
    for bi, block in enumerate(maps):
        for hi, matrix in enumerate(block):
            path = os.path.join(out_dir, f"attention_block{bi}_head{hi}.csv")
            np.savetxt(path, matrix, delimiter=",")
            paths.append(path)
            all_maps.append(matrix)
    mean_path = os.path.join(out_dir, "attention_mean.csv")
    np.savetxt(mean_path, np.mean(all_maps, axis=0), delimiter=",")
    paths.append(mean_path)
    return paths


# ---------------------------------------------------------------------------
# report assembly


@dataclass
class MetricsReport:
    weighted_mae: float
    weighted_mape: float
    unweighted_mae: float
    unweighted_mape: float
    per_segment: list
    per_step_mae: np.ndarray
    per_step_mape: np.ndarray
    groups: dict | None = None

    def to_json(self):
        return {
            "weighted": {"mae": self.weighted_mae, "mape": self.weighted_mape},
            "unweighted": {"mae": self.unweighted_mae, "mape": self.unweighted_mape},
            "per_segment": [
                {"start": s.segment[0], "end": s.segment[1],
                 "mae": s.mae, "mape": s.mape, "records": s.v}
                for s in self.per_segment
            ],
            "per_step": {"mae": self.per_step_mae.tolist(),
                         "mape": self.per_step_mape.tolist()},
            "groups": self.groups,
        }


def build_report(ps: PredictionSet, segment_avg_duration=None,
                 segment_record_count=None) -> MetricsReport:
    rows = segment_metrics(ps)
    if not rows:
        raise EvalError("no evaluable records in the prediction set")
    w_mae, w_mape = aggregate(rows, "weighted")
    u_mae, u_mape = aggregate(rows, "unweighted")
    step_mae, step_mape = per_step_profile(ps)
    groups = None
    if segment_avg_duration is not None and segment_record_count is not None:
        groups = grouped_report(rows, segment_avg_duration, segment_record_count)
    return MetricsReport(
        weighted_mae=w_mae, weighted_mape=w_mape,
        unweighted_mae=u_mae, unweighted_mape=u_mape,
        per_segment=rows, per_step_mae=step_mae, per_step_mape=step_mape,
        groups=groups,
    )


def write_report_files(report: MetricsReport, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    import json

    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        json.dump(report.to_json(), fh, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "per_segment.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["start_port", "end_port", "mae", "mape", "records"])
        for s in report.per_segment:
            w.writerow([s.segment[0], s.segment[1], repr(s.mae), repr(s.mape), s.v])
    with open(os.path.join(out_dir, "per_step.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mae", "mape"])
        for k in range(len(report.per_step_mae)):
            w.writerow([k + 1, repr(float(report.per_step_mae[k])),
                        repr(float(report.per_step_mape[k]))])
    if report.groups is not None:
        with open(os.path.join(out_dir, "groups.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["grouping", "bin", "n_segments", "records", "mae", "mape"])
            for grouping, rows in report.groups.items():
                for row in rows:
                    w.writerow([grouping, row["bin"], row["n_segments"],
                                row["records"], repr(row["mae"]), repr(row["mape"])])


# ---------------------------------------------------------------------------
# ablation suite


def run_ablations(train_samples, val_samples, test_samples, vocab,
                  estimator_params: dict) -> list:
    """Train the full model and the four ablations from identical seeds and
    report weighted-metric deltas against the full model."""
    def metrics_for(ablation):
        est = DurationForecaster(**{**estimator_params, "ablation": ablation})
        est.fit(train_samples, val_samples, vocab=vocab)
        ps = collate_predictions(est, test_samples)
        mae, mape = aggregate(segment_metrics(ps), "weighted")
        return est, mae, mape

    _, full_mae, full_mape = metrics_for(None)
    rows = [{"setting": "full", "ablation": None, "mae": full_mae, "mape": full_mape,
             "delta_mae": 0.0, "delta_mape": 0.0}]
    for ablation in ABLATIONS:
        _, mae, mape = metrics_for(ablation)
        rows.append({
            "setting": f"no_{ablation}", "ablation": ablation,
            "mae": mae, "mape": mape,
            "delta_mae": mae - full_mae, "delta_mape": mape - full_mape,
        })
    return rows


def constant_baseline_report(test_samples, mean_duration: float, horizon: int):
    """Weighted metrics for the predict-training-mean constant baseline."""
    from .estimator import ConstantForecaster

    ps = collate_predictions(ConstantForecaster(mean_duration, horizon), test_samples,
                             horizon=horizon)
    return aggregate(segment_metrics(ps), "weighted")


__all__ = [
    "PredictionSet", "RecordPredictions", "SegmentMetrics", "MetricsReport",
    "RegressionResult", "collate_predictions", "record_errors", "segment_metrics",
    "aggregate", "grouped_report", "per_step_profile", "ols_with_ci",
    "normalized_segment_mae", "sensitivity_regression", "attention_export",
    "build_report", "write_report_files", "run_ablations",
    "constant_baseline_report", "training_mean_duration",
]
