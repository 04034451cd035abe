from datetime import datetime, timezone

import numpy as np
import pytest


def fd_gradient(build_loss, param_value: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``build_loss()`` wrt one parameter array.

    ``build_loss`` must recompute the scalar loss from scratch, reading the
    (mutated in place) ``param_value`` array.
    """
    grad = np.zeros_like(param_value)
    flat = param_value.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = build_loss()
        flat[i] = orig - eps
        lo = build_loss()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def grads_agree(analytic: np.ndarray, numeric: np.ndarray,
                abs_tol: float = 1e-6, rel_tol: float = 1e-4) -> bool:
    diff = np.abs(analytic - numeric)
    tol = np.maximum(abs_tol, rel_tol * np.abs(numeric))
    return bool((diff <= tol).all())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_batch(rng, n_samples, lookback, horizon, n_ports=4, n_terminals=3,
                 n_carriers=3, windows_per_day=4, all_observed=False):
    """Hand-built stacked batch with plausible index ranges and positive
    durations; bypasses the ingest/features pipeline."""
    from voyagecast.features import Batch

    n = lookback + horizon
    obs = rng.random((n_samples, n)) < (1.0 if all_observed else 0.7)
    y = np.where(obs, rng.uniform(5.0, 90.0, (n_samples, n)), 0.0)
    y_in = y.copy()
    y_in[:, lookback:] = 0.0
    x = rng.normal(0.0, 1.0, (n_samples, n))
    x_in = x.copy()
    x_in[:, lookback:] = 0.0
    return Batch(
        g=rng.integers(0, 7, (n_samples, n)).astype(np.int32),
        r=rng.integers(0, windows_per_day, (n_samples, n)).astype(np.int32),
        p_start=np.repeat(rng.integers(0, n_ports, (n_samples, 1)), n, axis=1).astype(np.int32),
        p_end=np.repeat(rng.integers(0, n_ports, (n_samples, 1)), n, axis=1).astype(np.int32),
        terminal=np.where(obs, rng.integers(1, n_terminals, (n_samples, n)), 0).astype(np.int32),
        carrier=np.where(obs, rng.integers(1, n_carriers, (n_samples, n)), 0).astype(np.int32),
        y_in=np.where(obs, y_in, 0.0),
        x_in=x_in,
        length=np.where(obs, rng.uniform(-1, 1, (n_samples, n)), 0.0),
        width=np.where(obs, rng.uniform(-1, 1, (n_samples, n)), 0.0),
        teu=np.where(obs, rng.uniform(-1, 1, (n_samples, n)), 0.0),
        y_target=y[:, lookback:].copy(),
        x_target=x[:, lookback:].copy(),
        mask=obs[:, lookback:].astype(np.float64),
    )


def tiny_vocab(windows_per_day=4, n_ports=4, n_terminals=3, n_carriers=3):
    from voyagecast.features import Vocabularies

    return Vocabularies(
        ports={f"P{i}": i for i in range(1, n_ports)},
        terminals={f"T{i}": i for i in range(1, n_terminals)},
        carriers={f"C{i}": i for i in range(1, n_carriers)},
        windows_per_day=windows_per_day,
    )


@pytest.fixture(scope="session")
def small_world():
    """Shared desk-scale synthetic world: 4 ports, 10 vessels, 120 days."""
    from voyagecast.synth import WorldSpec, generate_world

    spec = WorldSpec(seed=11, n_ports=4, n_vessels=10, n_segments=6,
                     horizon_days=120, kappa=0.3, noise_std=1.0)
    return generate_world(spec)


@pytest.fixture(scope="session")
def small_world_records(small_world):
    from voyagecast.ingest import segment_all, SegmentationDiagnostics
    from voyagecast.synth import emit_ais

    tracks = emit_ais(small_world.schedule, 30.0)
    diagnostics = SegmentationDiagnostics()
    records = segment_all(tracks, small_world.geofences, small_world.statics,
                          small_world.timeline, diagnostics)
    return records, diagnostics


SPLIT_TRAIN_END = datetime(2021, 3, 10, tzinfo=timezone.utc)
SPLIT_VAL_END = datetime(2021, 4, 1, tzinfo=timezone.utc)


@pytest.fixture(scope="session")
def small_pipeline(small_world, small_world_records):
    """records -> counts -> series -> samples -> splits, shared per session."""
    from voyagecast.features import (
        build_segment_series, build_vocab, chronological_split, generate_samples)
    from voyagecast.ingest import filter_segments, port_vessel_counts
    from voyagecast.timeline import window_of

    records, _ = small_world_records
    tl = small_world.timeline
    counts = port_vessel_counts(records, tl)
    filtered = filter_segments(records, 10)
    vocab = build_vocab(filtered.records, SPLIT_TRAIN_END, tl)
    last_w = max(window_of(r.ata, tl) for r in filtered.records)
    series = build_segment_series(filtered.records, counts, tl, vocab, (1, last_w), seed=3)
    lookback, horizon = 12, 6
    samples = generate_samples(series, lookback, horizon, (1, last_w), tl, vocab)
    train, val, test = chronological_split(samples, SPLIT_TRAIN_END, SPLIT_VAL_END)
    return {
        "world": small_world, "records": records, "counts": counts,
        "filtered": filtered, "vocab": vocab, "series": series,
        "samples": samples, "train": train, "val": val, "test": test,
        "lookback": lookback, "horizon": horizon, "last_window": last_w,
    }
