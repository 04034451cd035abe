"""Deterministic synthetic maritime world for end-to-end pipeline testing.

Ports sit on a jittered planar grid, each with a small berth row nested in a
pilotage square and an anchorage square adjacent to the east. Vessels hop
around a fixed directed segment set; sailing durations follow a planted
congestion response ``base * (1 + kappa * lagged_count / norm) + noise``,
with slow seasonal waves in destination choice so that congestion is
autocorrelated and therefore learnable. Emitted AIS tracks include an exact
point at every zone transition, so trajectory segmentation recovers the
scheduled durations to within microseconds.

All coordinates are degrees treated as plane coordinates; every zone is an
axis-aligned rectangle, which keeps route-vs-zone clearance checks exact.
"""

from __future__ import annotations

import heapq
import json
import math
import zlib
from dataclasses import dataclass

import numpy as np

from .ingest import Berth, PortGeofence, VesselStatic, VesselTrack
from .timeline import DEFAULT_EPOCH, TimelineConfig, to_micros

_PORT_NAMES = [
    "ALDERPORT", "BRENNHAVN", "CORMORANT", "DRIFTWOOD", "EASTMERE", "FALKVIK",
    "GREYWATER", "HALCYON", "IRONQUAY", "JETTYBAR", "KELPSUND", "LOWTIDE",
    "MARLOWE", "NARWHAL", "OSPREY", "PELAGIA",
]
_CARRIERS = ["MERIDIAN", "BLUEWAKE", "NORTHSTAR", "TRADEWIND", "ATLASLINE", "HORIZONGO"]

# port-local geometry (plane units)
_PILOT_HALF = 0.5
_ANCH_HALF = 0.4
_ANCH_OFFSET = 1.0          # anchorage center east of the port center
_BERTH_HALF = 0.04
_BERTH_LAT = 0.2            # berth row north of the center
_BERTH_SPREAD = 0.15
_EXIT_INSET = 0.02          # transition waypoints sit this far inside a zone
_SOUTH_STANDOFF = 1.5
_EAST_STANDOFF = 2.2


class GenerationError(RuntimeError):
    pass


def substream(seed: int, label: str) -> np.random.Generator:
    """Independent, label-addressed random stream under one root seed."""
    return np.random.default_rng([int(seed), zlib.crc32(label.encode())])


@dataclass(frozen=True)
class WorldSpec:
    """Parameters of the synthetic world.

    The congestion response is ``duration = base * (1 + kappa * c / count_norm)
    + noise`` where ``c`` is the destination port's relative vessel count in
    the window before departure, clipped to keep durations positive.
    """

    seed: int = 7
    n_ports: int = 8
    n_vessels: int = 40
    n_segments: int = 12
    horizon_days: int = 365
    kappa: float = 0.3
    noise_std: float = 1.0
    base_durations: dict | None = None  # (start, end) name pairs -> hours
    base_duration_range: tuple = (24.0, 96.0)
    count_norm: float = 10.0
    duration_factor_bounds: tuple = (0.3, 2.5)
    berth_dwell_range: tuple = (6.0, 18.0)
    anchorage_dwell_hours: float = 1.0
    pilot_out_hours: float = 0.75
    pilot_in_hours: float = 0.75
    attraction_period_days: float = 60.0
    attraction_amplitude: float = 1.2
    dwell_wave_amplitude: float = 1.0  # seasonal berth-dwell modulation, drives slow count waves
    grid_spacing: float = 10.0
    berths_per_port: int = 3
    delta_t_hours: float = 6.0

    def __post_init__(self):
        if self.kappa < 0:
            raise GenerationError(f"kappa must be >= 0, got {self.kappa}")
        if self.base_duration_range[0] <= 0:
            raise GenerationError("base durations must be positive")
        if self.n_segments < self.n_ports:
            raise GenerationError("need at least one segment per port (a covering cycle)")

    @property
    def horizon_hours(self) -> float:
        return self.horizon_days * 24.0

    def timeline(self) -> TimelineConfig:
        return TimelineConfig(epoch=DEFAULT_EPOCH, delta_t_hours=self.delta_t_hours)


@dataclass
class PortLayout:
    name: str
    center: tuple  # (lat, lon)

    @property
    def pilotage_rect(self):
        lat, lon = self.center
        return (lat - _PILOT_HALF, lat + _PILOT_HALF, lon - _PILOT_HALF, lon + _PILOT_HALF)

    @property
    def anchorage_rect(self):
        lat, lon = self.center
        return (lat - _ANCH_HALF, lat + _ANCH_HALF,
                lon + _ANCH_OFFSET - _ANCH_HALF, lon + _ANCH_OFFSET + _ANCH_HALF)

    def berth_center(self, b: int, n_berths: int) -> tuple:
        lat, lon = self.center
        offs = np.linspace(-_BERTH_SPREAD, _BERTH_SPREAD, n_berths)
        return (lat + _BERTH_LAT, lon + float(offs[b]))

    def berth_rect(self, b: int, n_berths: int):
        blat, blon = self.berth_center(b, n_berths)
        return (blat - _BERTH_HALF, blat + _BERTH_HALF, blon - _BERTH_HALF, blon + _BERTH_HALF)

    # route anchor points; the inside/outside pairs straddle a zone face so
    # the crossing can be pinned to an exact instant
    @property
    def exit_point(self):  # inside the pilotage south face, at t_dep
        lat, lon = self.center
        return (lat - _PILOT_HALF + _EXIT_INSET, lon)

    @property
    def exit_outside(self):
        lat, lon = self.center
        return (lat - _PILOT_HALF - _EXIT_INSET, lon)

    @property
    def south_standoff(self):
        lat, lon = self.center
        return (lat - _SOUTH_STANDOFF, lon)

    @property
    def east_standoff(self):
        lat, lon = self.center
        return (lat, lon + _EAST_STANDOFF)

    @property
    def approach_outside(self):
        lat, lon = self.center
        return (lat, lon + _ANCH_OFFSET + _ANCH_HALF + _EXIT_INSET)

    @property
    def anchorage_entry(self):  # inside the anchorage east face, at t_arr
        lat, lon = self.center
        return (lat, lon + _ANCH_OFFSET + _ANCH_HALF - _EXIT_INSET)

    @property
    def anchorage_center(self):
        lat, lon = self.center
        return (lat, lon + _ANCH_OFFSET)

    def berth_approach(self, b: int, n_berths: int) -> tuple:
        lat, _ = self.center
        return (lat - _BERTH_LAT, self.berth_center(b, n_berths)[1])


@dataclass(frozen=True)
class PlannedVoyage:
    """Ground-truth voyage: all instants are hours since the epoch."""

    imo: str
    start_port: str
    end_port: str
    start_berth: int
    end_berth: int
    terminal: str
    t_leave: float
    t_dep: float
    t_arr: float
    t_berth: float
    duration: float
    window: int
    lagged_count: int
    base: float


@dataclass
class Stay:
    port: int
    berth: int
    t_start: float
    t_end: float


@dataclass
class Leg:
    voyage: PlannedVoyage
    origin: int
    dest: int


@dataclass
class VoyageSchedule:
    """Everything emit_ais needs: itineraries plus static world geometry."""

    spec: WorldSpec
    ports: list  # PortLayout
    routes: dict  # (origin_idx, dest_idx) -> list of (lat, lon) sea waypoints
    voyages: list  # PlannedVoyage, ordered by departure
    itineraries: dict  # imo -> list of Stay | Leg
    segments: list  # (start_name, end_name)
    base_durations: dict


@dataclass
class SynthWorld:
    spec: WorldSpec
    geofences: list
    statics: dict
    schedule: VoyageSchedule

    @property
    def timeline(self) -> TimelineConfig:
        return self.spec.timeline()


# ---------------------------------------------------------------------------
# geometry helpers


def _segment_hits_rect(p1, p2, rect) -> bool:
    """Exact closed-segment vs closed-axis-aligned-rect intersection."""
    xmin, xmax, ymin, ymax = rect
    x1, y1 = p1
    x2, y2 = p2
    dx, dy = x2 - x1, y2 - y1
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x1 - xmin), (dx, xmax - x1), (-dy, y1 - ymin), (dy, ymax - y1)):
        if p == 0.0:
            if q < 0.0:
                return False
        else:
            t = q / p
            if p < 0.0:
                t0 = max(t0, t)
            else:
                t1 = min(t1, t)
            if t0 > t1:
                return False
    return True


def _polyline_clear(waypoints, forbidden_rects) -> bool:
    for a, b in zip(waypoints, waypoints[1:]):
        for rect in forbidden_rects:
            if _segment_hits_rect(a, b, rect):
                return False
    return True


def _rect_ring(rect):
    xmin, xmax, ymin, ymax = rect
    return ((xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax), (xmin, ymin))


def _plan_route(ports, origin: int, dest: int, spec: WorldSpec) -> list:
    """Open-sea waypoints from just outside the origin pilotage to just
    outside the destination anchorage.

    A single bend keeps the lane clear of every berth, the origin pilotage
    and the destination anchorage; the bend grows until the exact rectangle
    clearance test passes.
    """
    first = ports[origin].exit_outside
    start = ports[origin].south_standoff
    end = ports[dest].east_standoff
    last = ports[dest].approach_outside

    n_b = spec.berths_per_port
    berth_rects = [p.berth_rect(b, n_b) for p in ports for b in range(n_b)]
    hazards = berth_rects + [ports[origin].pilotage_rect, ports[dest].anchorage_rect]

    mid = ((start[0] + end[0]) / 2.0, (start[1] + end[1]) / 2.0)
    d = (end[0] - start[0], end[1] - start[1])
    norm = math.hypot(*d) or 1.0
    perp = (-d[1] / norm, d[0] / norm)

    for magnitude in (2.0, -2.0, 4.0, -4.0, 7.0, -7.0, 11.0, -11.0, 16.0, -16.0):
        bend = (mid[0] + perp[0] * magnitude, mid[1] + perp[1] * magnitude)
        if _polyline_clear([first, start, bend, end, last], hazards):
            return [first, start, bend, end, last]
    raise GenerationError(f"no clear sea lane between ports {origin} and {dest}")


def _place_ports(spec: WorldSpec, attempt: int) -> list:
    rng = substream(spec.seed, f"layout/{attempt}")
    spacing = spec.grid_spacing * (1.4 ** attempt)
    cols = math.ceil(math.sqrt(spec.n_ports))
    ports = []
    for i in range(spec.n_ports):
        gx, gy = divmod(i, cols)
        jitter = rng.uniform(-0.15 * spacing, 0.15 * spacing, size=2)
        center = (gx * spacing + float(jitter[0]), gy * spacing + float(jitter[1]))
        name = _PORT_NAMES[i] if i < len(_PORT_NAMES) else f"PORT{i:03d}"
        ports.append(PortLayout(name=name, center=center))
    return ports


def _build_segments(spec: WorldSpec) -> list:
    """Directed segment set: a covering cycle plus extra random edges."""
    rng = substream(spec.seed, "segments")
    order = rng.permutation(spec.n_ports)
    edges = [(int(order[i]), int(order[(i + 1) % spec.n_ports])) for i in range(spec.n_ports)]
    pool = [
        (i, j)
        for i in range(spec.n_ports)
        for j in range(spec.n_ports)
        if i != j and (i, j) not in set(edges)
    ]
    extra = spec.n_segments - len(edges)
    if extra > len(pool):
        raise GenerationError("n_segments exceeds the number of possible port pairs")
    if extra > 0:
        picks = rng.choice(len(pool), size=extra, replace=False)
        edges.extend(pool[int(k)] for k in sorted(picks))
    return edges


def _build_statics(spec: WorldSpec) -> dict:
    rng = substream(spec.seed, "fleet")
    statics = {}
    for v in range(spec.n_vessels):
        imo = f"91{v:05d}"
        size = float(rng.uniform(0.0, 1.0))
        statics[imo] = VesselStatic(
            imo=imo,
            mmsi=f"2441{v:05d}",
            carrier=_CARRIERS[int(rng.integers(len(_CARRIERS)))],
            teu=int(1000 + size * 15000),
            width=round(22.0 + size * 36.0, 1),
            length=round(150.0 + size * 250.0, 1),
        )
    return statics


def _base_duration_table(spec: WorldSpec, segment_names) -> dict:
    if spec.base_durations is not None:
        missing = [s for s in segment_names if s not in spec.base_durations]
        if missing:
            raise GenerationError(f"base_durations missing segments: {missing}")
        return dict(spec.base_durations)
    rng = substream(spec.seed, "bases")
    lo, hi = spec.base_duration_range
    return {seg: float(rng.uniform(lo, hi)) for seg in segment_names}


# ---------------------------------------------------------------------------
# world generation


def generate_world(spec: WorldSpec) -> SynthWorld:
    """Build geofences, a vessel fleet and a ground-truth voyage schedule."""
    last_err = None
    for attempt in range(5):
        ports = _place_ports(spec, attempt)
        try:
            edges = _build_segments(spec)
            routes = {(i, j): _plan_route(ports, i, j, spec) for i, j in edges}
        except GenerationError as e:
            last_err = e
            continue
        schedule = _simulate(spec, ports, edges, routes)
        geofences = _geofences_of(ports, spec)
        return SynthWorld(
            spec=spec, geofences=geofences, statics=_build_statics(spec), schedule=schedule
        )
    raise GenerationError(f"world generation failed after respaced retries: {last_err}")


def _geofences_of(ports, spec: WorldSpec) -> list:
    fences = []
    for p in ports:
        berths = tuple(
            Berth(
                berth_id=f"{p.name}-B{b + 1}",
                terminal=f"{p.name}-T{b + 1}",
                ring=_rect_ring(p.berth_rect(b, spec.berths_per_port)),
            )
            for b in range(spec.berths_per_port)
        )
        fences.append(
            PortGeofence(
                port_name=p.name,
                port_id=p.name,
                terminals=tuple(b.terminal for b in berths),
                anchorage=_rect_ring(p.anchorage_rect),
                pilotage=_rect_ring(p.pilotage_rect),
                berths=berths,
            )
        )
    return fences


def _simulate(spec: WorldSpec, ports, edges, routes) -> VoyageSchedule:
    """Chronological event loop over vessel departures.

    Counts are committed per voyage (departure decrement, arrival increment),
    and a departure only ever reads windows strictly before its own, so the
    planted regressor equals the count series later reconstructed from the
    voyage records.
    """
    rng = substream(spec.seed, "traffic")
    cfg = spec.timeline()
    statics = sorted(_build_statics(spec))
    names = [p.name for p in ports]
    segment_names = [(names[i], names[j]) for i, j in edges]
    bases = _base_duration_table(spec, segment_names)
    out_edges = {i: [] for i in range(spec.n_ports)}
    for i, j in edges:
        out_edges[i].append(j)

    n_windows = int(spec.horizon_hours / spec.delta_t_hours) + 2
    deltas = np.zeros((spec.n_ports, n_windows + 2), dtype=np.int64)
    cum = np.zeros(spec.n_ports, dtype=np.int64)
    ptr = np.zeros(spec.n_ports, dtype=np.int64)
    phases = substream(spec.seed, "phases").random(spec.n_ports)
    period_h = spec.attraction_period_days * 24.0

    def lagged_count(port: int, upto_window: int) -> int:
        upto_window = min(upto_window, n_windows + 1)
        while ptr[port] < upto_window:
            ptr[port] += 1
            cum[port] += deltas[port, ptr[port]]
        return int(cum[port])

    def attraction(dest: int, t: float) -> float:
        return math.exp(
            spec.attraction_amplitude * math.sin(2 * math.pi * (t / period_h + phases[dest]))
        )

    def dwell_factor(port: int, t: float) -> float:
        # slow per-port season in berth occupancy; makes destination counts
        # a smooth, forecastable congestion proxy
        return math.exp(
            spec.dwell_wave_amplitude * math.sin(2 * math.pi * (t / period_h + phases[port]))
        )

    heap = []
    itineraries = {}
    state = {}
    for seq, imo in enumerate(statics):
        port = int(rng.integers(spec.n_ports))
        berth = int(rng.integers(spec.berths_per_port))
        t_leave = float(rng.uniform(0.5, 36.0))
        state[imo] = (port, berth, 0.0)
        itineraries[imo] = []
        heapq.heappush(heap, (t_leave, seq, imo))

    voyages = []
    seq = spec.n_vessels
    lo_f, hi_f = spec.duration_factor_bounds
    while heap:
        t_leave, _, imo = heapq.heappop(heap)
        port, berth, t_stay_start = state[imo]
        if t_leave + spec.pilot_out_hours >= spec.horizon_hours:
            itineraries[imo].append(Stay(port, berth, t_stay_start, spec.horizon_hours))
            continue
        dests = out_edges[port]
        weights = np.array([attraction(d, t_leave) for d in dests])
        dest = int(dests[int(rng.choice(len(dests), p=weights / weights.sum()))])
        dest_berth = int(rng.integers(spec.berths_per_port))
        noise = float(rng.normal(0.0, spec.noise_std)) if spec.noise_std > 0 else 0.0

        t_dep = t_leave + spec.pilot_out_hours
        w_dep = int(t_dep // spec.delta_t_hours) + 1
        c_lag = lagged_count(dest, w_dep - 1) if w_dep > 1 else 0
        base = bases[(names[port], names[dest])]
        duration = base * (1.0 + spec.kappa * c_lag / spec.count_norm) + noise
        duration = min(max(duration, lo_f * base), hi_f * base)
        t_arr = t_dep + duration
        t_berth = t_arr + spec.anchorage_dwell_hours + spec.pilot_in_hours

        if t_berth + 2.0 > spec.horizon_hours:
            itineraries[imo].append(Stay(port, berth, t_stay_start, spec.horizon_hours))
            continue

        w_arr = int(t_arr // spec.delta_t_hours) + 1
        deltas[port, min(w_dep, n_windows + 1)] -= 1
        deltas[dest, min(w_arr, n_windows + 1)] += 1

        voyage = PlannedVoyage(
            imo=imo,
            start_port=names[port],
            end_port=names[dest],
            start_berth=berth,
            end_berth=dest_berth,
            terminal=f"{names[dest]}-T{dest_berth + 1}",
            t_leave=t_leave,
            t_dep=t_dep,
            t_arr=t_arr,
            t_berth=t_berth,
            duration=duration,
            window=w_dep,
            lagged_count=c_lag,
            base=base,
        )
        voyages.append(voyage)
        itineraries[imo].append(Stay(port, berth, t_stay_start, t_leave))
        itineraries[imo].append(Leg(voyage, port, dest))

        dwell = float(rng.uniform(*spec.berth_dwell_range)) * dwell_factor(dest, t_berth)
        state[imo] = (dest, dest_berth, t_berth)
        heapq.heappush(heap, (t_berth + dwell, seq, imo))
        seq += 1

    voyages.sort(key=lambda v: (v.t_dep, v.imo))
    return VoyageSchedule(
        spec=spec,
        ports=ports,
        routes=routes,
        voyages=voyages,
        itineraries=itineraries,
        segments=segment_names,
        base_durations=bases,
    )


# ---------------------------------------------------------------------------
# AIS emission


def emit_ais(schedule: VoyageSchedule, sample_interval_minutes: float = 10.0) -> dict:
    """Piecewise-linear AIS tracks sampled on a regular grid.

    Every zone-transition waypoint is also emitted at its exact instant, so
    the departure (last pilotage point) and arrival (first anchorage point)
    marks land on the scheduled times to within a microsecond.
    """
    if sample_interval_minutes <= 0:
        raise GenerationError("sample interval must be positive")
    spec = schedule.spec
    statics = _build_statics(spec)
    step_h = sample_interval_minutes / 60.0
    grid_h = np.arange(0.0, spec.horizon_hours + 1e-9, step_h)
    epoch_us = to_micros(spec.timeline().epoch)

    tracks = {}
    for imo in sorted(schedule.itineraries):
        way_t, way_lat, way_lon = _waypoints_for(schedule, imo)
        times_h = np.unique(np.concatenate([grid_h, way_t]))
        times_h = times_h[(times_h >= way_t[0]) & (times_h <= way_t[-1])]
        lat = np.interp(times_h, way_t, way_lat)
        lon = np.interp(times_h, way_t, way_lon)

        times_us = epoch_us + np.round(times_h * 3_600_000_000).astype(np.int64)
        keep = np.ones(len(times_us), dtype=bool)
        keep[1:] = times_us[1:] != times_us[:-1]
        times_us, lat, lon = times_us[keep], lat[keep], lon[keep]

        dlat, dlon = np.diff(lat), np.diff(lon)
        dt = np.maximum(np.diff(times_us) / 3_600_000_000, 1e-9)
        leg_speed = np.hypot(dlat, dlon) / dt * 30.0  # pseudo-knots
        speed = np.append(leg_speed, 0.0)
        head = np.append(np.degrees(np.arctan2(dlon, dlat)) % 360.0, 0.0)
        stat = statics[imo]
        draught = np.full(len(times_us), 8.0 + (stat.teu / 16000.0) * 6.0)

        tracks[imo] = VesselTrack(
            imo=imo, mmsi=stat.mmsi, times_us=times_us,
            lat=lat, lon=lon, speed=speed, head=head, draught=draught,
        )
    return tracks


def _waypoints_for(schedule: VoyageSchedule, imo: str):
    """Timed (t, lat, lon) waypoints across a vessel's whole itinerary."""
    spec = schedule.spec
    ports = schedule.ports
    n_b = spec.berths_per_port
    ts, lats, lons = [], [], []

    def push(t, pt):
        if ts and t <= ts[-1]:
            t = ts[-1] + 1e-7
        ts.append(t)
        lats.append(pt[0])
        lons.append(pt[1])

    for item in schedule.itineraries[imo]:
        if isinstance(item, Stay):
            pt = ports[item.port].berth_center(item.berth, n_b)
            push(item.t_start, pt)
            push(item.t_end, pt)
        else:
            v = item.voyage
            origin, dest = ports[item.origin], ports[item.dest]
            push(v.t_leave, origin.berth_center(v.start_berth, n_b))
            push(v.t_dep, origin.exit_point)
            # open-sea polyline squeezed between one-second margins so the
            # zone-face crossings happen within a second of t_dep and t_arr
            route = schedule.routes[(item.origin, item.dest)]
            sea_lo, sea_hi = v.t_dep + 1.0 / 3600.0, v.t_arr - 1.0 / 3600.0
            dists = np.cumsum(
                [0.0] + [math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(route, route[1:])]
            )
            span = dists[-1] or 1.0
            for pt, d in zip(route, dists):
                push(sea_lo + (sea_hi - sea_lo) * d / span, pt)
            push(v.t_arr, dest.anchorage_entry)
            push(v.t_arr + 0.1, dest.anchorage_center)
            push(v.t_arr + spec.anchorage_dwell_hours, dest.anchorage_center)
            push(
                v.t_arr + spec.anchorage_dwell_hours + spec.pilot_in_hours * 0.7,
                dest.berth_approach(v.end_berth, n_b),
            )
            push(v.t_berth, dest.berth_center(v.end_berth, n_b))

    return np.array(ts), np.array(lats), np.array(lons)


# ---------------------------------------------------------------------------
# file emission (formats the ingest module consumes)


def write_world(world: SynthWorld, out_dir, sample_interval_minutes: float = 10.0) -> dict:
    """Write ais.csv, geofences.geojson, vessels.csv and ground_truth.jsonl."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "ais": os.path.join(out_dir, "ais.csv"),
        "geofences": os.path.join(out_dir, "geofences.geojson"),
        "vessels": os.path.join(out_dir, "vessels.csv"),
        "ground_truth": os.path.join(out_dir, "ground_truth.jsonl"),
    }

    tracks = emit_ais(world.schedule, sample_interval_minutes)
    epoch = world.timeline.epoch
    with open(paths["ais"], "w") as fh:
        fh.write("createTime,IMO,MMSI,speed,latitude,longitude,head,draught,destination,ETA\n")
        for imo in sorted(tracks):
            tr = tracks[imo]
            iso = (
                np.array(tr.times_us, dtype="datetime64[us]")
                .astype("datetime64[s]")
                .astype(str)
            )
            for i in range(len(tr)):
                us = int(tr.times_us[i]) % 1_000_000
                stamp = f"{iso[i]}.{us:06d}+00:00" if us else f"{iso[i]}+00:00"
                fh.write(
                    f"{stamp},{tr.imo},{tr.mmsi},{tr.speed[i]:.2f},{float(tr.lat[i])!r},"
                    f"{float(tr.lon[i])!r},{tr.head[i]:.1f},{tr.draught[i]:.1f},,\n"
                )

    features = []
    for fence in world.geofences:
        def feature(ring, zone, extra=None):
            props = {"portId": fence.port_id, "portName": fence.port_name, "zone": zone}
            props.update(extra or {})
            return {
                "type": "Feature",
                "properties": props,
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[lon, lat] for lat, lon in ring]],
                },
            }

        features.append(feature(fence.anchorage, "anchorage"))
        features.append(feature(fence.pilotage, "pilotage"))
        for berth in fence.berths:
            features.append(
                feature(berth.ring, "berth", {"berthId": berth.berth_id, "terminal": berth.terminal})
            )
    with open(paths["geofences"], "w") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=1, sort_keys=True)

    with open(paths["vessels"], "w") as fh:
        fh.write("IMO,MMSI,crrName,TEU,width,length\n")
        for imo in sorted(world.statics):
            s = world.statics[imo]
            fh.write(f"{s.imo},{s.mmsi},{s.carrier},{s.teu},{s.width!r},{s.length!r}\n")

    with open(paths["ground_truth"], "w") as fh:
        for v in world.schedule.voyages:
            fh.write(
                json.dumps(
                    {
                        "imo": v.imo,
                        "start_port": v.start_port,
                        "end_port": v.end_port,
                        "terminal": v.terminal,
                        "dep_hours": v.t_dep,
                        "arr_hours": v.t_arr,
                        "duration": v.duration,
                        "window": v.window,
                        "lagged_count": v.lagged_count,
                        "base": v.base,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return paths
