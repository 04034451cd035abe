"""Feature assembly for the forecaster.

Per-segment series aligned on window indices, sliding-window samples over a
lookback/horizon pair, chronological train/val/test splitting, and
standardization fitted on the training split only. Categorical vocabularies
are frozen on the training period; unseen values map to the reserved
unknown index 0.
"""

from __future__ import annotations

import csv
import json
import os
import zlib
from dataclasses import dataclass, replace
from datetime import datetime

import numpy as np

from .timeline import TimelineConfig, window_bounds, window_identifiers

CONTINUOUS_CHANNELS = ("y", "x", "length", "width", "teu")


class FeatureError(ValueError):
    pass


# ---------------------------------------------------------------------------
# vocabularies


@dataclass(frozen=True)
class Vocabularies:
    """Categorical value -> index maps; index 0 is reserved for unknown."""

    ports: dict
    terminals: dict
    carriers: dict
    windows_per_day: int

    @property
    def n_ports(self):
        return len(self.ports) + 1

    @property
    def n_terminals(self):
        return len(self.terminals) + 1

    @property
    def n_carriers(self):
        return len(self.carriers) + 1

    def port_index(self, name):
        return self.ports.get(name, 0)

    def terminal_index(self, name):
        return self.terminals.get(name, 0)

    def carrier_index(self, name):
        return self.carriers.get(name, 0)

    def to_json(self):
        return {
            "ports": self.ports,
            "terminals": self.terminals,
            "carriers": self.carriers,
            "windows_per_day": self.windows_per_day,
        }

    @classmethod
    def from_json(cls, doc):
        return cls(
            ports=dict(doc["ports"]),
            terminals=dict(doc["terminals"]),
            carriers=dict(doc["carriers"]),
            windows_per_day=int(doc["windows_per_day"]),
        )


def build_vocab(records, train_end: datetime, cfg: TimelineConfig) -> Vocabularies:
    """Vocabularies from records departing before ``train_end`` only."""
    ports, terminals, carriers = set(), set(), set()
    for r in records:
        if r.departure >= train_end:
            continue
        ports.add(r.start_port)
        ports.add(r.end_port)
        terminals.add(r.terminal)
        carriers.add(r.carrier)
    return Vocabularies(
        ports={p: i for i, p in enumerate(sorted(ports), start=1)},
        terminals={t: i for i, t in enumerate(sorted(terminals), start=1)},
        carriers={c: i for i, c in enumerate(sorted(carriers), start=1)},
        windows_per_day=cfg.windows_per_day,
    )


# ---------------------------------------------------------------------------
# per-segment series


@dataclass
class SegmentSeries:
    """Aligned per-window arrays for one directed segment.

    Index i corresponds to window ``first_window + i``. ``y`` is 0 where no
    record was observed; ``x`` (destination-port relative count) is defined
    at every window. ``carrier``/``terminal`` hold raw values ('' when
    unobserved) beside their vocabulary index arrays.
    """

    segment: tuple
    first_window: int
    y: np.ndarray
    x: np.ndarray
    length: np.ndarray
    width: np.ndarray
    teu: np.ndarray
    carrier: list
    terminal: list
    carrier_idx: np.ndarray
    terminal_idx: np.ndarray
    obs: np.ndarray  # bool

    @property
    def last_window(self):
        return self.first_window + len(self.y) - 1


def _collision_pick(n: int, seed: int, segment: tuple, window: int) -> int:
    """Deterministic survivor choice for windows with several records."""
    tag = zlib.crc32(f"{segment[0]}->{segment[1]}".encode())
    return int(np.random.default_rng([seed, tag, window]).integers(n))


def build_segment_series(records, port_counts: dict, cfg: TimelineConfig,
                         vocab: Vocabularies, window_range: tuple,
                         seed: int = 0) -> dict:
    """Assemble a SegmentSeries per directed segment present in ``records``.

    Windows holding more than one record keep exactly one, chosen by a
    seeded per-(segment, window) draw. Raises if a destination port has no
    count series.
    """
    first, last = window_range
    if first < 1 or last < first:
        raise FeatureError(f"invalid window range {window_range}")
    n = last - first + 1

    by_segment = {}
    for r in records:
        if not (first <= r.window <= last):
            continue
        by_segment.setdefault((r.start_port, r.end_port), {}).setdefault(r.window, []).append(r)

    out = {}
    for segment in sorted(by_segment):
        if segment[1] not in port_counts:
            raise FeatureError(f"destination port {segment[1]!r} missing from port counts")
        series = SegmentSeries(
            segment=segment,
            first_window=first,
            y=np.zeros(n),
            x=port_counts[segment[1]].at(np.arange(first, last + 1)).astype(np.float64),
            length=np.zeros(n),
            width=np.zeros(n),
            teu=np.zeros(n),
            carrier=[""] * n,
            terminal=[""] * n,
            carrier_idx=np.zeros(n, dtype=np.int32),
            terminal_idx=np.zeros(n, dtype=np.int32),
            obs=np.zeros(n, dtype=bool),
        )
        for window, cands in by_segment[segment].items():
            cands = sorted(cands, key=lambda r: (r.ata, r.imo))
            rec = cands[_collision_pick(len(cands), seed, segment, window) if len(cands) > 1 else 0]
            i = window - first
            series.y[i] = rec.duration
            series.length[i] = rec.length
            series.width[i] = rec.width
            series.teu[i] = rec.teu
            series.carrier[i] = rec.carrier
            series.terminal[i] = rec.terminal
            series.carrier_idx[i] = vocab.carrier_index(rec.carrier)
            series.terminal_idx[i] = vocab.terminal_index(rec.terminal)
            series.obs[i] = True
        out[segment] = series
    return out


# ---------------------------------------------------------------------------
# samples


@dataclass
class Sample:
    """One sliding-window instance over lookback + horizon steps.

    Input arrays span the ``lookback + horizon`` step positions for windows
    ``anchor - lookback .. anchor + horizon - 1``; the time-series channels
    ``y_in``/``x_in`` are exactly zero over the trailing horizon positions.
    Targets cover windows ``anchor .. anchor + horizon - 1`` in raw units.
    """

    segment: tuple
    anchor: int
    anchor_ts: datetime
    g: np.ndarray
    r: np.ndarray
    p_start: np.ndarray
    p_end: np.ndarray
    terminal: np.ndarray
    carrier: np.ndarray
    y_in: np.ndarray
    x_in: np.ndarray
    length: np.ndarray
    width: np.ndarray
    teu: np.ndarray
    obs_in: np.ndarray
    y_target: np.ndarray
    x_target: np.ndarray
    mask: np.ndarray

    @property
    def lookback(self):
        return len(self.y_in) - len(self.y_target)

    @property
    def horizon(self):
        return len(self.y_target)


def sliding_samples(series: SegmentSeries, lookback: int, horizon: int,
                    window_range: tuple, cfg: TimelineConfig,
                    vocab: Vocabularies) -> list:
    """All samples whose full step span fits inside ``window_range``,
    ordered by anchor; empty when the range is shorter than one span."""
    first, last = window_range
    if first < series.first_window or last > series.last_window:
        raise FeatureError("window_range exceeds the series coverage")
    n_steps = lookback + horizon
    anchors = range(first + lookback, last - horizon + 2)

    windows = np.arange(first, last + 1, dtype=np.int64)
    g_all, r_all = window_identifiers(windows, cfg)
    base = series.first_window
    p_start_idx = vocab.port_index(series.segment[0])
    p_end_idx = vocab.port_index(series.segment[1])

    samples = []
    for anchor in anchors:
        lo = anchor - lookback - base
        hi = lo + n_steps
        tl = anchor - first - lookback  # into the g/r arrays
        y_in = series.y[lo:hi].copy()
        x_in = series.x[lo:hi].copy()
        y_in[lookback:] = 0.0
        x_in[lookback:] = 0.0
        samples.append(
            Sample(
                segment=series.segment,
                anchor=anchor,
                anchor_ts=window_bounds(anchor, cfg)[0],
                g=g_all[tl:tl + n_steps].astype(np.int32),
                r=r_all[tl:tl + n_steps].astype(np.int32),
                p_start=np.full(n_steps, p_start_idx, dtype=np.int32),
                p_end=np.full(n_steps, p_end_idx, dtype=np.int32),
                terminal=series.terminal_idx[lo:hi].copy(),
                carrier=series.carrier_idx[lo:hi].copy(),
                y_in=y_in,
                x_in=x_in,
                length=series.length[lo:hi].copy(),
                width=series.width[lo:hi].copy(),
                teu=series.teu[lo:hi].copy(),
                obs_in=series.obs[lo:hi].copy(),
                y_target=series.y[lo + lookback:hi].copy(),
                x_target=series.x[lo + lookback:hi].copy(),
                mask=series.obs[lo + lookback:hi].astype(np.float64),
            )
        )
    return samples


def generate_samples(series_map: dict, lookback: int, horizon: int,
                     window_range: tuple, cfg: TimelineConfig,
                     vocab: Vocabularies) -> list:
    """Deterministic sample stream over all segments (sorted), then anchors."""
    samples = []
    for segment in sorted(series_map):
        samples.extend(
            sliding_samples(series_map[segment], lookback, horizon, window_range, cfg, vocab)
        )
    return samples


def chronological_split(samples, train_end: datetime, val_end: datetime):
    """Partition by anchor-window start: [.., train_end) / [train_end,
    val_end) / [val_end, ..). Boundary instants go to the later split."""
    if train_end >= val_end:
        raise FeatureError(f"train_end {train_end} must precede val_end {val_end}")
    train, val, test = [], [], []
    for s in samples:
        if s.anchor_ts < train_end:
            train.append(s)
        elif s.anchor_ts < val_end:
            val.append(s)
        else:
            test.append(s)
    return train, val, test


# ---------------------------------------------------------------------------
# standardization


@dataclass
class FeatureStats:
    """Training-split statistics per continuous channel, plus the frozen
    vocabularies. A channel whose std is 0 passes through unscaled."""

    mean: dict
    std: dict
    vocab: Vocabularies

    def to_json(self):
        return {"mean": self.mean, "std": self.std, "vocab": self.vocab.to_json()}

    @classmethod
    def from_json(cls, doc):
        return cls(
            mean={k: float(v) for k, v in doc["mean"].items()},
            std={k: float(v) for k, v in doc["std"].items()},
            vocab=Vocabularies.from_json(doc["vocab"]),
        )


def _channel_values(samples, channel):
    chunks = []
    for s in samples:
        L = s.lookback
        if channel == "y":
            sel = s.obs_in.copy()
            sel[L:] = False
            chunks.append(s.y_in[sel])
        elif channel == "x":
            chunks.append(s.x_in[:L])
        else:
            chunks.append(getattr(s, channel)[s.obs_in])
    return np.concatenate(chunks) if chunks else np.zeros(0)


def fit_stats(train_samples, vocab: Vocabularies) -> FeatureStats:
    """Population mean/std of each continuous input channel over the
    training samples' observed positions."""
    if not train_samples:
        raise FeatureError("cannot fit statistics on an empty training split")
    mean, std = {}, {}
    for channel in CONTINUOUS_CHANNELS:
        values = _channel_values(train_samples, channel)
        if values.size == 0:
            mean[channel], std[channel] = 0.0, 0.0
        else:
            mean[channel] = float(values.mean())
            std[channel] = float(values.std())
    return FeatureStats(mean=mean, std=std, vocab=vocab)


def _scaled(values, sel, mean, std):
    out = values.copy()
    if std > 0:
        out[sel] = (values[sel] - mean) / std
    return out


def apply_stats(sample: Sample, stats: FeatureStats) -> Sample:
    """Standardize continuous inputs at observed positions only; zero-padded
    positions stay exactly zero. Targets remain in raw units."""
    L = sample.lookback
    y_sel = sample.obs_in.copy()
    y_sel[L:] = False
    x_sel = np.zeros(len(sample.x_in), dtype=bool)
    x_sel[:L] = True
    return replace(
        sample,
        y_in=_scaled(sample.y_in, y_sel, stats.mean["y"], stats.std["y"]),
        x_in=_scaled(sample.x_in, x_sel, stats.mean["x"], stats.std["x"]),
        length=_scaled(sample.length, sample.obs_in, stats.mean["length"], stats.std["length"]),
        width=_scaled(sample.width, sample.obs_in, stats.mean["width"], stats.std["width"]),
        teu=_scaled(sample.teu, sample.obs_in, stats.mean["teu"], stats.std["teu"]),
    )


def apply_stats_all(samples, stats: FeatureStats) -> list:
    return [apply_stats(s, stats) for s in samples]


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    g: np.ndarray
    r: np.ndarray
    p_start: np.ndarray
    p_end: np.ndarray
    terminal: np.ndarray
    carrier: np.ndarray
    y_in: np.ndarray
    x_in: np.ndarray
    length: np.ndarray
    width: np.ndarray
    teu: np.ndarray
    y_target: np.ndarray
    x_target: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return self.g.shape[0]


def stack_samples(samples) -> Batch:
    if not samples:
        raise FeatureError("cannot stack an empty sample list")
    fields = [
        "g", "r", "p_start", "p_end", "terminal", "carrier",
        "y_in", "x_in", "length", "width", "teu",
        "y_target", "x_target", "mask",
    ]
    return Batch(**{f: np.stack([getattr(s, f) for s in samples]) for f in fields})


# ---------------------------------------------------------------------------
# series cache (documented CSV bundle)


_SERIES_COLUMNS = ["window", "y", "x", "length", "width", "teu", "carrier", "terminal", "observed"]


def write_series_cache(series_map: dict, vocab: Vocabularies, window_range: tuple,
                       out_dir) -> None:
    """One CSV per segment plus a manifest with the vocabulary tables."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for segment in sorted(series_map):
        series = series_map[segment]
        fname = f"{segment[0]}__{segment[1]}.csv"
        entries.append({"start": segment[0], "end": segment[1], "file": fname})
        with open(os.path.join(out_dir, fname), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_SERIES_COLUMNS)
            for i in range(len(series.y)):
                w.writerow([
                    series.first_window + i,
                    repr(float(series.y[i])), repr(float(series.x[i])),
                    repr(float(series.length[i])), repr(float(series.width[i])),
                    repr(float(series.teu[i])),
                    series.carrier[i], series.terminal[i], int(series.obs[i]),
                ])
    manifest = {
        "format_version": 1,
        "window_range": list(window_range),
        "segments": entries,
        "vocab": vocab.to_json(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def read_series_cache(in_dir):
    """Returns (series_map, vocab, window_range) from a cache directory."""
    with open(os.path.join(in_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    vocab = Vocabularies.from_json(manifest["vocab"])
    window_range = tuple(manifest["window_range"])
    series_map = {}
    for entry in manifest["segments"]:
        segment = (entry["start"], entry["end"])
        with open(os.path.join(in_dir, entry["file"]), newline="") as fh:
            rows = list(csv.DictReader(fh))
        series = SegmentSeries(
            segment=segment,
            first_window=int(rows[0]["window"]) if rows else window_range[0],
            y=np.array([float(r["y"]) for r in rows]),
            x=np.array([float(r["x"]) for r in rows]),
            length=np.array([float(r["length"]) for r in rows]),
            width=np.array([float(r["width"]) for r in rows]),
            teu=np.array([float(r["teu"]) for r in rows]),
            carrier=[r["carrier"] for r in rows],
            terminal=[r["terminal"] for r in rows],
            carrier_idx=np.array([vocab.carrier_index(r["carrier"]) for r in rows], dtype=np.int32),
            terminal_idx=np.array([vocab.terminal_index(r["terminal"]) for r in rows], dtype=np.int32),
            obs=np.array([r["observed"] == "1" for r in rows], dtype=bool),
        )
        series_map[segment] = series
    return series_map, vocab, window_range
