"""Raw-data ingestion: AIS points, port geofences, vessel statics.

Turns per-vessel AIS streams into voyage records by detecting berthing
events and taking the last point inside the origin port's pilotage area as
the departure mark and the first point inside the destination port's
anchorage area as the arrival mark. Also reconstructs relative per-port
vessel-count series from the record set and filters sparse segments.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, fields as dc_fields
from datetime import datetime

import numpy as np
import pandas as pd

from .geometry import point_in_region, points_in_region, polygon_bbox  # noqa: F401  (point_in_region is part of this module's surface)
from .timeline import TimelineConfig, from_micros, to_micros, window_of, window_of_micros


class IngestError(ValueError):
    pass


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class AisPoint:
    create_time: datetime
    imo: str
    mmsi: str
    lat: float
    lon: float
    speed: float
    head: float
    draught: float


@dataclass
class VesselTrack:
    """Columnar AIS stream for one vessel, strictly time-sorted."""

    imo: str
    mmsi: str
    times_us: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    speed: np.ndarray
    head: np.ndarray
    draught: np.ndarray

    def __len__(self):
        return len(self.times_us)


@dataclass(frozen=True)
class Berth:
    berth_id: str
    terminal: str
    ring: tuple


@dataclass(frozen=True)
class PortGeofence:
    port_name: str
    port_id: str
    terminals: tuple
    anchorage: tuple
    pilotage: tuple
    berths: tuple  # of Berth


@dataclass(frozen=True)
class VesselStatic:
    imo: str
    mmsi: str
    carrier: str
    teu: int
    width: float
    length: float

    def __post_init__(self):
        if self.teu <= 0:
            raise IngestError(f"vessel {self.imo}: TEU must be > 0, got {self.teu}")
        if self.width <= 0 or self.length <= 0:
            raise IngestError(f"vessel {self.imo}: width/length must be > 0")


@dataclass(frozen=True)
class VoyageRecord:
    window: int
    imo: str
    width: float
    length: float
    teu: int
    carrier: str
    start_port: str
    end_port: str
    terminal: str
    ata: datetime
    duration: float  # hours

    @property
    def departure(self) -> datetime:
        return from_micros(to_micros(self.ata) - round(self.duration * 3_600_000_000))


@dataclass
class PortCountSeries:
    """Relative vessel count per window, from a zero baseline at window 0."""

    port_id: str
    counts: np.ndarray  # counts[w-1] = value at window w

    def at(self, windows) -> np.ndarray:
        """Counts at the given windows; constant after the last event."""
        w = np.asarray(windows, dtype=np.int64)
        if w.size and w.min() < 1:
            raise IngestError(f"window indices must be >= 1, got {w.min()}")
        if len(self.counts) == 0:
            return np.zeros(w.shape, dtype=np.int64)
        return self.counts[np.minimum(w, len(self.counts)) - 1]


@dataclass
class SegmentationDiagnostics:
    """Tally of voyages dropped during segmentation, by reason."""

    missing_departure_mark: int = 0
    missing_arrival_mark: int = 0
    same_port_pair: int = 0
    nonpositive_duration: int = 0
    duplicate_timestamps_dropped: int = 0

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in dc_fields(self)}


@dataclass
class SegmentFilterResult:
    segments: set  # of (start_port, end_port)
    records: list
    ports: list  # sorted port names indexing the adjacency matrix
    adjacency: np.ndarray

    @property
    def port_index(self):
        return {p: i for i, p in enumerate(self.ports)}


# ---------------------------------------------------------------------------
# loaders


_AIS_COLUMNS = ["createTime", "IMO", "MMSI", "speed", "latitude", "longitude", "head", "draught"]


def load_ais_tracks(path) -> dict:
    """Parse an AIS file (CSV or JSONL by extension) into per-vessel tracks.

    Field names follow the raw AIS schema; extra columns (destination,
    captain-reported ETA, ...) are ignored. Exact duplicate timestamps per
    vessel are dropped, keeping the first occurrence.
    """
    path = str(path)
    if path.endswith((".jsonl", ".json")):
        df = pd.read_json(path, lines=True, dtype={"IMO": str, "MMSI": str})
    else:
        df = pd.read_csv(path, dtype={"IMO": str, "MMSI": str})
    missing = [c for c in _AIS_COLUMNS if c not in df.columns]
    if missing:
        raise IngestError(f"AIS file {path} is missing columns: {missing}")
    df = df[_AIS_COLUMNS].copy()
    df["createTime"] = pd.to_datetime(df["createTime"], utc=True, format="ISO8601")

    lat = df["latitude"].to_numpy(dtype=np.float64)
    lon = df["longitude"].to_numpy(dtype=np.float64)
    bad = (np.abs(lat) > 90) | (np.abs(lon) > 180)
    if bad.any():
        i = int(np.argmax(bad))
        raise IngestError(
            f"AIS row {i}: coordinates ({lat[i]}, {lon[i]}) outside valid ranges"
        )

    tracks = {}
    for imo, group in df.groupby("IMO", sort=True):
        group = group.sort_values("createTime", kind="stable")
        times = group["createTime"].astype("int64").to_numpy() // 1000  # ns -> us
        keep = np.ones(len(times), dtype=bool)
        keep[1:] = times[1:] != times[:-1]
        tracks[str(imo)] = VesselTrack(
            imo=str(imo),
            mmsi=str(group["MMSI"].iloc[0]),
            times_us=times[keep],
            lat=group["latitude"].to_numpy(dtype=np.float64)[keep],
            lon=group["longitude"].to_numpy(dtype=np.float64)[keep],
            speed=group["speed"].to_numpy(dtype=np.float64)[keep],
            head=group["head"].to_numpy(dtype=np.float64)[keep],
            draught=group["draught"].to_numpy(dtype=np.float64)[keep],
        )
    return tracks


def load_geofences(path) -> list:
    """Read a GeoJSON FeatureCollection of port zones.

    Each feature carries properties ``portId``, ``portName``, ``zone`` in
    {anchorage, pilotage, berth}; berth features additionally carry
    ``berthId`` and ``terminal``. Coordinates are GeoJSON [lon, lat] and are
    stored internally as (lat, lon).
    """
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise IngestError(f"{path}: expected a GeoJSON FeatureCollection")

    by_port = {}
    for feat in doc.get("features", []):
        props = feat.get("properties", {})
        geom = feat.get("geometry", {})
        if geom.get("type") != "Polygon":
            raise IngestError(f"{path}: only Polygon geometries are supported")
        ring = tuple((float(lat), float(lon)) for lon, lat in geom["coordinates"][0])
        pid, pname, zone = props.get("portId"), props.get("portName"), props.get("zone")
        if not pid or zone not in ("anchorage", "pilotage", "berth"):
            raise IngestError(f"{path}: feature needs portId and a valid zone, got {props}")
        entry = by_port.setdefault(pid, {"name": pname, "anchorage": None, "pilotage": None, "berths": []})
        if zone == "berth":
            entry["berths"].append(Berth(str(props.get("berthId")), str(props.get("terminal")), ring))
        else:
            entry[zone] = ring

    fences = []
    for pid in sorted(by_port):
        entry = by_port[pid]
        if entry["anchorage"] is None or entry["pilotage"] is None or not entry["berths"]:
            raise IngestError(f"port {pid}: needs anchorage, pilotage and >= 1 berth")
        fences.append(
            PortGeofence(
                port_name=entry["name"],
                port_id=pid,
                terminals=tuple(sorted({b.terminal for b in entry["berths"]})),
                anchorage=entry["anchorage"],
                pilotage=entry["pilotage"],
                berths=tuple(entry["berths"]),
            )
        )
    return fences


def load_vessel_statics(path) -> dict:
    """Read the vessel statics CSV; IMO must be unique."""
    statics = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            imo = row["IMO"]
            if imo in statics:
                raise IngestError(f"duplicate IMO {imo} in vessel statics")
            statics[imo] = VesselStatic(
                imo=imo,
                mmsi=row["MMSI"],
                carrier=row["crrName"],
                teu=int(row["TEU"]),
                width=float(row["width"]),
                length=float(row["length"]),
            )
    return statics


# ---------------------------------------------------------------------------
# segmentation


class _ZoneIndex:
    """Precomputed membership testers with bounding-box prefilters."""

    def __init__(self, fences):
        self.fences = list(fences)
        self.berth_zones = []  # (port_idx, berth) in deterministic order
        for pi, fence in enumerate(self.fences):
            for berth in fence.berths:
                self.berth_zones.append((pi, berth))

    @staticmethod
    def _members(lat, lon, ring):
        lat_min, lat_max, lon_min, lon_max = polygon_bbox(ring)
        cand = (lat >= lat_min) & (lat <= lat_max) & (lon >= lon_min) & (lon <= lon_max)
        out = np.zeros(len(lat), dtype=bool)
        if cand.any():
            idx = np.flatnonzero(cand)
            out[idx] = points_in_region(lat[idx], lon[idx], ring)
        return out

    def berth_labels(self, lat, lon) -> np.ndarray:
        """Index into berth_zones of the berth containing each point, else -1."""
        labels = np.full(len(lat), -1, dtype=np.int64)
        for bi, (pi, berth) in enumerate(self.berth_zones):
            m = self._members(lat, lon, berth.ring)
            labels[m & (labels < 0)] = bi
        return labels

    def pilotage_members(self, lat, lon, port_idx) -> np.ndarray:
        return self._members(lat, lon, self.fences[port_idx].pilotage)

    def anchorage_members(self, lat, lon, port_idx) -> np.ndarray:
        return self._members(lat, lon, self.fences[port_idx].anchorage)


def _as_track(points) -> VesselTrack:
    if isinstance(points, VesselTrack):
        return points
    pts = list(points)
    if not pts:
        return VesselTrack("", "", np.zeros(0, np.int64), *(np.zeros(0) for _ in range(5)))
    return VesselTrack(
        imo=pts[0].imo,
        mmsi=pts[0].mmsi,
        times_us=np.array([to_micros(p.create_time) for p in pts], dtype=np.int64),
        lat=np.array([p.lat for p in pts]),
        lon=np.array([p.lon for p in pts]),
        speed=np.array([p.speed for p in pts]),
        head=np.array([p.head for p in pts]),
        draught=np.array([p.draught for p in pts]),
    )


def _berthing_events(labels: np.ndarray, min_dwell_points: int):
    """Maximal runs of consecutive points inside one berth polygon."""
    events = []  # (start_idx, end_idx_inclusive, berth_zone_idx)
    i, n = 0, len(labels)
    while i < n:
        if labels[i] < 0:
            i += 1
            continue
        j = i
        while j + 1 < n and labels[j + 1] == labels[i]:
            j += 1
        if j - i + 1 >= min_dwell_points:
            events.append((i, j, int(labels[i])))
        i = j + 1
    return events


def segment_voyages(points, fences, static: VesselStatic,
                    diagnostics: SegmentationDiagnostics | None = None,
                    min_dwell_points: int = 1) -> list:
    """Split one vessel's time-sorted AIS stream into voyage records.

    For each pair of consecutive berthing events at distinct ports, the
    departure mark is the last point inside the origin pilotage area and the
    arrival mark is the first point inside the destination anchorage area,
    both taken strictly between the two berth stays. Voyages with a missing
    mark are skipped and counted in ``diagnostics``.
    """
    track = _as_track(points)
    if len(track) == 0:
        return []
    if not (np.diff(track.times_us) > 0).all():
        raise IngestError(f"vessel {track.imo}: AIS points must be strictly time-sorted")
    if diagnostics is None:
        diagnostics = SegmentationDiagnostics()

    zones = _ZoneIndex(fences) if not isinstance(fences, _ZoneIndex) else fences
    labels = zones.berth_labels(track.lat, track.lon)
    events = _berthing_events(labels, min_dwell_points)

    records = []
    for (s1, e1, b1), (s2, e2, b2) in zip(events, events[1:]):
        port_a, berth_a = zones.berth_zones[b1]
        port_b, berth_b = zones.berth_zones[b2]
        if port_a == port_b:
            diagnostics.same_port_pair += 1
            continue
        lo, hi = e1 + 1, s2  # indices strictly between the two stays
        if lo >= hi:
            diagnostics.missing_departure_mark += 1
            continue
        seg = slice(lo, hi)
        pil = zones.pilotage_members(track.lat[seg], track.lon[seg], port_a)
        if not pil.any():
            diagnostics.missing_departure_mark += 1
            continue
        anc = zones.anchorage_members(track.lat[seg], track.lon[seg], port_b)
        if not anc.any():
            diagnostics.missing_arrival_mark += 1
            continue
        dep_us = int(track.times_us[lo + np.flatnonzero(pil)[-1]])
        arr_us = int(track.times_us[lo + np.flatnonzero(anc)[0]])
        if arr_us <= dep_us:
            diagnostics.nonpositive_duration += 1
            continue
        records.append(
            _make_record(
                dep_us, arr_us, static,
                zones.fences[port_a].port_name, zones.fences[port_b].port_name,
                berth_b.terminal,
            )
        )
    return records


def _make_record(dep_us, arr_us, static, start_port, end_port, terminal) -> VoyageRecord:
    duration = (arr_us - dep_us) / 3_600_000_000
    return VoyageRecord(
        window=0,  # assigned at regularization time
        imo=static.imo,
        width=static.width,
        length=static.length,
        teu=static.teu,
        carrier=static.carrier,
        start_port=start_port,
        end_port=end_port,
        terminal=terminal,
        ata=from_micros(arr_us),
        duration=duration,
    )


def regularize(records, cfg: TimelineConfig) -> list:
    """Assign each record's departure time window."""
    out = []
    for r in records:
        out.append(
            VoyageRecord(
                window=window_of(r.departure, cfg),
                imo=r.imo, width=r.width, length=r.length, teu=r.teu,
                carrier=r.carrier, start_port=r.start_port, end_port=r.end_port,
                terminal=r.terminal, ata=r.ata, duration=r.duration,
            )
        )
    return out


def segment_all(tracks: dict, fences, statics: dict, cfg: TimelineConfig,
                diagnostics: SegmentationDiagnostics | None = None,
                min_dwell_points: int = 1, max_workers: int = 1) -> list:
    """Segment every vessel and merge deterministically.

    Vessels without a static record are skipped. Per-vessel work is
    independent and may run on a small thread pool; results are sorted on
    (imo, departure time) and regularized onto window indices either way.
    """
    if diagnostics is None:
        diagnostics = SegmentationDiagnostics()
    zones = _ZoneIndex(fences)
    vessels = [imo for imo in sorted(tracks) if imo in statics]

    records = []
    if max_workers and max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        diags = {imo: SegmentationDiagnostics() for imo in vessels}
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            chunks = pool.map(
                lambda imo: segment_voyages(
                    tracks[imo], zones, statics[imo], diags[imo], min_dwell_points),
                vessels,
            )
            for chunk in chunks:
                records.extend(chunk)
        for part in diags.values():
            for key, value in part.as_dict().items():
                setattr(diagnostics, key, getattr(diagnostics, key) + value)
    else:
        for imo in vessels:
            records.extend(
                segment_voyages(tracks[imo], zones, statics[imo], diagnostics, min_dwell_points)
            )
    records.sort(key=lambda r: (r.imo, r.ata))
    return regularize(records, cfg)


# ---------------------------------------------------------------------------
# port counts and segment filtering


def port_vessel_counts(records, cfg: TimelineConfig) -> dict:
    """Relative vessel-count series per port, zero baseline before window 1.

    counts[t] = counts[t-1] + arrivals(t) - departures(t), where a record
    departs its start port in its departure window and arrives at its end
    port in window_of(ata).
    """
    events = {}  # port -> {window: delta}
    for r in records:
        dep_w = r.window
        arr_w = window_of(r.ata, cfg)
        events.setdefault(r.start_port, {}).setdefault(dep_w, 0)
        events[r.start_port][dep_w] -= 1
        events.setdefault(r.end_port, {}).setdefault(arr_w, 0)
        events[r.end_port][arr_w] += 1

    out = {}
    for port in sorted(events):
        deltas = events[port]
        last = max(deltas)
        series = np.zeros(last, dtype=np.int64)
        for w, d in deltas.items():
            series[w - 1] += d
        out[port] = PortCountSeries(port_id=port, counts=np.cumsum(series))
    return out


def filter_segments(records, min_count: int) -> SegmentFilterResult:
    """Keep records on segments with strictly more than ``min_count`` records;
    also materialize the segment adjacency matrix."""
    if min_count < 0:
        raise IngestError(f"min_count must be >= 0, got {min_count}")
    tally = {}
    for r in records:
        key = (r.start_port, r.end_port)
        tally[key] = tally.get(key, 0) + 1
    segments = {k for k, v in tally.items() if v > min_count}
    kept = [r for r in records if (r.start_port, r.end_port) in segments]

    ports = sorted({p for seg in segments for p in seg})
    index = {p: i for i, p in enumerate(ports)}
    adjacency = np.zeros((len(ports), len(ports)), dtype=np.int8)
    for s, e in segments:
        adjacency[index[s], index[e]] = 1
    return SegmentFilterResult(segments=segments, records=kept, ports=ports, adjacency=adjacency)


# ---------------------------------------------------------------------------
# CSV round trips


_RECORD_COLUMNS = [
    "time window", "IMO", "width", "length", "TEU", "crrName",
    "startPortName", "endPortName", "tmnName", "ATA", "duration",
]


def write_voyage_records(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_RECORD_COLUMNS)
        for r in records:
            w.writerow([
                r.window, r.imo, repr(r.width), repr(r.length), r.teu, r.carrier,
                r.start_port, r.end_port, r.terminal,
                r.ata.isoformat(), repr(r.duration),
            ])


def read_voyage_records(path) -> list:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in _RECORD_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise IngestError(f"{path}: missing voyage record columns {missing}")
        for row in reader:
            records.append(
                VoyageRecord(
                    window=int(row["time window"]),
                    imo=row["IMO"],
                    width=float(row["width"]),
                    length=float(row["length"]),
                    teu=int(row["TEU"]),
                    carrier=row["crrName"],
                    start_port=row["startPortName"],
                    end_port=row["endPortName"],
                    terminal=row["tmnName"],
                    ata=datetime.fromisoformat(row["ATA"]),
                    duration=float(row["duration"]),
                )
            )
    return records


def write_port_counts(counts: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["port_id", "window", "count"])
        for port in sorted(counts):
            series = counts[port]
            for window, value in enumerate(series.counts, start=1):
                w.writerow([port, window, int(value)])


def read_port_counts(path) -> dict:
    rows = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["port_id"], []).append((int(row["window"]), int(row["count"])))
    out = {}
    for port, pairs in rows.items():
        pairs.sort()
        counts = np.array([c for _, c in pairs], dtype=np.int64)
        out[port] = PortCountSeries(port_id=port, counts=counts)
    return out
