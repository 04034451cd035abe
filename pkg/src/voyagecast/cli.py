"""Command-line pipeline driver.

Subcommands cover the whole workflow: ``synth`` writes a synthetic raw
dataset, ``preprocess``/``counts``/``featurize`` turn raw files into the
per-segment series cache, ``train``/``evaluate``/``ablate``/``attention``
operate on a run directory, and ``sweep`` re-trains across horizon or
capacity grids. Every command echoes its resolved configuration beside its
outputs. Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig
from .estimator import DurationForecaster, training_mean_duration
from .evaluate import (
    attention_export,
    build_report,
    collate_predictions,
    constant_baseline_report,
    normalized_segment_mae,
    run_ablations,
    segment_metrics,
    sensitivity_regression,
    aggregate,
    write_report_files,
)
from .features import (
    build_segment_series,
    build_vocab,
    chronological_split,
    generate_samples,
    read_series_cache,
    write_series_cache,
)
from .ingest import (
    SegmentationDiagnostics,
    filter_segments,
    load_ais_tracks,
    load_geofences,
    load_vessel_statics,
    port_vessel_counts,
    read_port_counts,
    read_voyage_records,
    segment_all,
    write_port_counts,
    write_voyage_records,
)
from .synth import WorldSpec, generate_world, write_world
from .timeline import TimelineConfig, window_of
from .train import derive_seed

CAPACITY_GRID = [
    (1, 16, 32), (1, 16, 64), (1, 32, 32), (1, 32, 64),
    (2, 16, 32), (2, 16, 64), (2, 32, 32), (2, 32, 64),
]


def _timeline(cfg: RunConfig) -> TimelineConfig:
    return TimelineConfig(
        epoch=cfg.datetime_at("timeline.epoch"),
        delta_t_hours=cfg["timeline.delta_t_hours"],
    )


def _world_spec(cfg: RunConfig) -> WorldSpec:
    return WorldSpec(
        seed=derive_seed(cfg["run.seed"], "data"),
        n_ports=cfg["world.n_ports"],
        n_vessels=cfg["world.n_vessels"],
        n_segments=cfg["world.n_segments"],
        horizon_days=cfg["world.horizon_days"],
        kappa=cfg["world.kappa"],
        noise_std=cfg["world.noise_std"],
        delta_t_hours=cfg["timeline.delta_t_hours"],
    )


def _estimator_params(cfg: RunConfig) -> dict:
    return {
        "d_emb": cfg["model.d_emb"],
        "d_model": cfg["model.d_model"],
        "n_head": cfg["model.n_head"],
        "n_block": cfg["model.n_block"],
        "d_temp": cfg["model.d_temp"],
        "p_att": cfg["model.p_att"],
        "p_ffn": cfg["model.p_ffn"],
        "lookback": cfg["model.lookback"],
        "horizon": cfg["model.horizon"],
        "beta": cfg["model.beta"],
        "eta": cfg["model.eta"],
        "scale_by_head_dim": cfg["model.scale_by_head_dim"],
        "pe_base": cfg["model.pe_base"],
        "lr0": cfg["train.lr0"],
        "lr_decay": cfg["train.decay"],
        "lr_decay_every": cfg["train.decay_every"],
        "batch_size": cfg["train.batch_size"],
        "max_epochs": cfg["train.max_epochs"],
        "clip_norm": cfg["train.clip_norm"],
        "seed": derive_seed(cfg["run.seed"], "train"),
    }


def default_run_id(cfg: RunConfig) -> str:
    return "run-" + hashlib.sha256(cfg.echo().encode()).hexdigest()[:10]


def _run_dir(cfg: RunConfig, run_id: str | None) -> str:
    return os.path.join(cfg["paths.runs_dir"], run_id or default_run_id(cfg))


# ---------------------------------------------------------------------------
# dataset assembly shared by train / evaluate / ablate / sweep


def _load_splits(cfg: RunConfig, lookback: int, horizon: int):
    data_dir = cfg["paths.data_dir"]
    series_dir = os.path.join(data_dir, "processed", "series")
    series_map, vocab, window_range = read_series_cache(series_dir)
    samples = generate_samples(series_map, lookback, horizon, window_range,
                               _timeline(cfg), vocab)
    train, val, test = chronological_split(
        samples, cfg.datetime_at("split.train_end"), cfg.datetime_at("split.val_end"))
    return train, val, test, vocab


def _segment_stats_from_records(cfg: RunConfig):
    records_path = os.path.join(cfg["paths.data_dir"], "processed", "voyage_records.csv")
    records = read_voyage_records(records_path)
    durations, counts = {}, {}
    for r in records:
        key = (r.start_port, r.end_port)
        durations.setdefault(key, []).append(r.duration)
        counts[key] = counts.get(key, 0) + 1
    avg = {k: float(np.mean(v)) for k, v in durations.items()}
    return avg, counts


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, args) -> int:
    raw_dir = os.path.join(cfg["paths.data_dir"], "raw")
    world = generate_world(_world_spec(cfg))
    paths = write_world(world, raw_dir, cfg["world.ais_interval_minutes"])
    cfg.write_echo(os.path.join(raw_dir, "config.resolved"))
    print(f"synth: {len(world.schedule.voyages)} voyages, "
          f"{len(world.geofences)} ports -> {raw_dir}")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return 0


def cmd_preprocess(cfg: RunConfig, args) -> int:
    data_dir = cfg["paths.data_dir"]
    raw, out = os.path.join(data_dir, "raw"), os.path.join(data_dir, "processed")
    os.makedirs(out, exist_ok=True)
    tracks = load_ais_tracks(os.path.join(raw, "ais.csv"))
    fences = load_geofences(os.path.join(raw, "geofences.geojson"))
    statics = load_vessel_statics(os.path.join(raw, "vessels.csv"))
    diagnostics = SegmentationDiagnostics()
    records = segment_all(tracks, fences, statics, _timeline(cfg), diagnostics,
                          min_dwell_points=cfg["ingest.min_dwell_points"],
                          max_workers=cfg["run.threads"])
    write_voyage_records(records, os.path.join(out, "voyage_records.csv"))
    with open(os.path.join(out, "diagnostics.json"), "w") as fh:
        json.dump(diagnostics.as_dict(), fh, indent=1, sort_keys=True)
    cfg.write_echo(os.path.join(out, "config.resolved"))
    print(f"preprocess: {len(records)} voyage records, skipped="
          f"{sum(diagnostics.as_dict().values())}")
    return 0


def cmd_counts(cfg: RunConfig, args) -> int:
    out = os.path.join(cfg["paths.data_dir"], "processed")
    records = read_voyage_records(os.path.join(out, "voyage_records.csv"))
    counts = port_vessel_counts(records, _timeline(cfg))
    write_port_counts(counts, os.path.join(out, "port_counts.csv"))
    print(f"counts: {len(counts)} ports")
    return 0


def cmd_featurize(cfg: RunConfig, args) -> int:
    out = os.path.join(cfg["paths.data_dir"], "processed")
    tl = _timeline(cfg)
    records = read_voyage_records(os.path.join(out, "voyage_records.csv"))
    counts = read_port_counts(os.path.join(out, "port_counts.csv"))
    filtered = filter_segments(records, cfg["ingest.min_segment_count"])
    if not filtered.records:
        raise ConfigError("no segment passes the record-count filter; lower "
                          "ingest.min_segment_count")
    last_window = max(window_of(r.ata, tl) for r in filtered.records)
    vocab = build_vocab(filtered.records, cfg.datetime_at("split.train_end"), tl)
    series_map = build_segment_series(
        filtered.records, counts, tl, vocab, (1, last_window),
        seed=derive_seed(cfg["run.seed"], "collide"))
    write_series_cache(series_map, vocab, (1, last_window),
                       os.path.join(out, "series"))
    cfg.write_echo(os.path.join(out, "config.resolved"))
    print(f"featurize: {len(series_map)} segments over windows 1..{last_window}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    run_dir = _run_dir(cfg, args.run_id)
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    train, val, test, vocab = _load_splits(cfg, cfg["model.lookback"], cfg["model.horizon"])
    del test  # the trainer never sees the test split
    est = DurationForecaster(**_estimator_params(cfg))
    est.fit(train, val, vocab=vocab)
    cfg.write_echo(os.path.join(run_dir, "config.resolved"))
    est.save(os.path.join(run_dir, "checkpoints", "best.json"),
             extra={"best_epoch": est.best_epoch_, "best_val_loss": est.best_val_loss_})
    with open(os.path.join(run_dir, "log.jsonl"), "w") as fh:
        for row in est.fit_log_:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"train: {len(train)} train / {len(val)} val samples, "
          f"best epoch {est.best_epoch_} (val loss {est.best_val_loss_:.4f}) -> {run_dir}")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    run_dir = _run_dir(cfg, args.run_id)
    est = DurationForecaster.load(os.path.join(run_dir, "checkpoints", "best.json"))
    _, _, test, _ = _load_splits(cfg, est.lookback, est.horizon)
    if not test:
        raise ConfigError("empty test split; check split.val_end vs the data range")
    ps = collate_predictions(est, test)
    avg_duration, record_count = _segment_stats_from_records(cfg)
    report = build_report(ps, avg_duration, record_count)

    reports_dir = os.path.join(run_dir, "reports")
    write_report_files(report, reports_dir)
    norm_mae = normalized_segment_mae(ps)
    sens = None
    if len(norm_mae) >= 3:
        reg = sensitivity_regression(norm_mae, record_count)
        sens = {"slope": reg.slope, "intercept": reg.intercept,
                "ci95": [reg.ci_low, reg.ci_high], "n_segments": reg.n}
        with open(os.path.join(reports_dir, "sensitivity.json"), "w") as fh:
            json.dump(sens, fh, indent=1, sort_keys=True)

    mean_dur = training_mean_duration(_load_splits(cfg, est.lookback, est.horizon)[0])
    base_mae, base_mape = constant_baseline_report(test, mean_dur, est.horizon)
    with open(os.path.join(reports_dir, "baseline.json"), "w") as fh:
        json.dump({"constant_prediction": mean_dur,
                   "weighted_mae": base_mae, "weighted_mape": base_mape},
                  fh, indent=1, sort_keys=True)

    if args.plots:
        _write_plots(report, norm_mae, record_count, reports_dir)
    print(f"evaluate: weighted MAE {report.weighted_mae:.3f} h, "
          f"MAPE {report.weighted_mape * 100:.2f}% "
          f"(baseline {base_mae:.3f} h / {base_mape * 100:.2f}%) -> {reports_dir}")
    return 0


def _write_plots(report, norm_mae, record_count, reports_dir) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if len(report.per_step_mae):
        fig, ax1 = plt.subplots(figsize=(8, 4))
        steps = np.arange(1, len(report.per_step_mae) + 1)
        ax1.plot(steps, report.per_step_mae, "o-", label="MAE (h)")
        ax1.set_xlabel("future step")
        ax1.set_ylabel("MAE (h)")
        ax2 = ax1.twinx()
        ax2.plot(steps, report.per_step_mape * 100, "s--", color="tab:orange", label="MAPE (%)")
        ax2.set_ylabel("MAPE (%)")
        fig.tight_layout()
        fig.savefig(os.path.join(reports_dir, "per_step.png"), dpi=120)
        plt.close(fig)

    if norm_mae:
        fig, ax = plt.subplots(figsize=(6, 4))
        xs = [record_count[s] for s in norm_mae]
        ys = [norm_mae[s] for s in norm_mae]
        ax.scatter(xs, ys, alpha=0.7)
        ax.set_xlabel("records per segment")
        ax.set_ylabel("normalized MAE")
        fig.tight_layout()
        fig.savefig(os.path.join(reports_dir, "sensitivity.png"), dpi=120)
        plt.close(fig)


def cmd_ablate(cfg: RunConfig, args) -> int:
    run_dir = _run_dir(cfg, args.run_id)
    reports_dir = os.path.join(run_dir, "reports")
    os.makedirs(reports_dir, exist_ok=True)
    train, val, test, vocab = _load_splits(cfg, cfg["model.lookback"], cfg["model.horizon"])
    rows = run_ablations(train, val, test, vocab, _estimator_params(cfg))
    cfg.write_echo(os.path.join(run_dir, "config.resolved"))
    path = os.path.join(reports_dir, "ablation.csv")
    with open(path, "w") as fh:
        fh.write("setting,mae,delta_mae,mape,delta_mape\n")
        for row in rows:
            fh.write(f"{row['setting']},{row['mae']!r},{row['delta_mae']!r},"
                     f"{row['mape']!r},{row['delta_mape']!r}\n")
    for row in rows:
        print(f"  {row['setting']:>16}: MAE {row['mae']:.3f} "
              f"({row['delta_mae']:+.3f}) MAPE {row['mape'] * 100:.2f}% "
              f"({row['delta_mape'] * 100:+.2f}pp)")
    print(f"ablate: {len(rows) - 1} ablations -> {path}")
    return 0


def cmd_attention(cfg: RunConfig, args) -> int:
    run_dir = _run_dir(cfg, args.run_id)
    est = DurationForecaster.load(os.path.join(run_dir, "checkpoints", "best.json"))
    _, _, test, _ = _load_splits(cfg, est.lookback, est.horizon)
    if not test:
        raise ConfigError("empty test split; nothing to visualize")
    sample = test[0]
    if args.segment:
        start, _, end = args.segment.partition(":")
        matches = [s for s in test if s.segment == (start, end)]
        if not matches:
            raise ConfigError(f"no test sample on segment {start}->{end}")
        sample = matches[0]
    out_dir = os.path.join(run_dir, "reports", "attention")
    paths = attention_export(est, sample, out_dir)
    print(f"attention: segment {sample.segment[0]}->{sample.segment[1]} "
          f"anchor {sample.anchor}, {len(paths)} files -> {out_dir}")
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    run_dir = _run_dir(cfg, args.run_id)
    reports_dir = os.path.join(run_dir, "reports")
    os.makedirs(reports_dir, exist_ok=True)

    grid = []
    if args.horizons:
        for h in args.horizons.split(","):
            grid.append({"model.horizon": int(h)})
    if args.capacity:
        for n_block, d_emb, d_model in CAPACITY_GRID:
            grid.append({"model.n_block": n_block, "model.d_emb": d_emb,
                         "model.d_model": d_model})
    if not grid:
        raise ConfigError("sweep needs --horizons and/or --capacity")

    rows = []
    for overrides in grid:
        sub = RunConfig(dict(cfg.values))
        for key, value in overrides.items():
            sub.values[key] = value
        train, val, test, vocab = _load_splits(sub, sub["model.lookback"], sub["model.horizon"])
        est = DurationForecaster(**_estimator_params(sub))
        est.fit(train, val, vocab=vocab)
        ps = collate_predictions(est, test)
        mae, mape = aggregate(segment_metrics(ps), "weighted")
        row = {**overrides, "weighted_mae": mae, "weighted_mape": mape}
        rows.append(row)
        print(f"  sweep {overrides}: MAE {mae:.3f} h MAPE {mape * 100:.2f}%")

    cfg.write_echo(os.path.join(run_dir, "config.resolved"))
    path = os.path.join(reports_dir, "sweep.csv")
    keys = sorted({k for row in rows for k in row})
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(repr(row.get(k, "")) if isinstance(row.get(k), float)
                              else str(row.get(k, "")) for k in keys) + "\n")
    print(f"sweep: {len(rows)} rows -> {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voyagecast",
        description="Segment-level sailing duration forecasting pipeline",
    )
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one configuration key")
    parser.add_argument("--seed", type=int, help="override run.seed")
    parser.add_argument("--threads", type=int, help="cap worker threads (run.threads)")
    parser.add_argument("--data-dir", help="override paths.data_dir")
    parser.add_argument("--runs-dir", help="override paths.runs_dir")

    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("synth", "generate the synthetic raw dataset"),
        ("preprocess", "segment AIS tracks into voyage records"),
        ("counts", "reconstruct per-port vessel-count series"),
        ("featurize", "filter segments and build the per-segment series cache"),
        ("train", "train the forecaster and keep the best checkpoint"),
        ("evaluate", "run the evaluation protocol on the test split"),
        ("ablate", "train the four feature/task ablations"),
        ("attention", "export attention heatmaps for one test sample"),
        ("sweep", "re-train across horizon or capacity grids"),
    ]:
        p = sub.add_parser(name, help=help_text)
        if name in ("train", "evaluate", "ablate", "attention", "sweep"):
            p.add_argument("--run-id", help="run directory name (default: config hash)")
        if name == "evaluate":
            p.add_argument("--plots", action="store_true", help="emit static plot images")
        if name == "attention":
            p.add_argument("--segment", metavar="START:END",
                           help="pick a test sample on this segment")
        if name == "sweep":
            p.add_argument("--horizons", help="comma-separated horizon lengths")
            p.add_argument("--capacity", action="store_true",
                           help="run the 8-point capacity grid")
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "counts": cmd_counts,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "attention": cmd_attention,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.overrides)
        if args.seed is not None:
            cfg.values["run.seed"] = args.seed
        if args.threads is not None:
            cfg.values["run.threads"] = args.threads
        if args.data_dir:
            cfg.values["paths.data_dir"] = args.data_dir
        if args.runs_dir:
            cfg.values["paths.runs_dir"] = args.runs_dir
        return _COMMANDS[args.command](cfg, args)
    except (OSError, json.JSONDecodeError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
