from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from voyagecast.ingest import (
    Berth,
    IngestError,
    PortGeofence,
    SegmentationDiagnostics,
    VesselStatic,
    AisPoint,
    filter_segments,
    load_ais_tracks,
    load_geofences,
    load_vessel_statics,
    port_vessel_counts,
    read_port_counts,
    read_voyage_records,
    segment_all,
    segment_voyages,
    write_port_counts,
    write_voyage_records,
)
from voyagecast.timeline import TimelineConfig, window_of

UTC = timezone.utc
T0 = datetime(2021, 1, 1, tzinfo=UTC)
CFG = TimelineConfig()


def square(clat, clon, half):
    return (
        (clat - half, clon - half), (clat + half, clon - half),
        (clat + half, clon + half), (clat - half, clon + half),
    )


def two_port_world():
    """Port A at the origin, port B far east; berth nested in pilotage,
    anchorage adjacent."""
    def port(name, clat, clon):
        return PortGeofence(
            port_name=name, port_id=name,
            terminals=(f"{name}-T1",),
            anchorage=square(clat, clon + 3.0, 1.0),
            pilotage=square(clat, clon, 2.0),
            berths=(Berth(f"{name}-B1", f"{name}-T1", square(clat, clon, 0.2)),),
        )
    return [port("A", 0.0, 0.0), port("B", 0.0, 100.0)]


STATIC = VesselStatic(imo="9000001", mmsi="244000001", carrier="ACME",
                      teu=5000, width=32.0, length=300.0)


def pt(hours, lat, lon):
    return AisPoint(create_time=T0 + timedelta(hours=hours), imo=STATIC.imo,
                    mmsi=STATIC.mmsi, lat=lat, lon=lon, speed=10.0, head=90.0,
                    draught=10.0)


class TestSegmentVoyages:
    def test_single_voyage_duration_by_subtraction(self):
        # berthed at A until t=0, last pilotage-A point at t=2h,
        # first anchorage-B point at t=50h, berthed at B at t=55h
        points = [
            pt(-2.0, 0.0, 0.0),           # berth A
            pt(0.0, 0.0, 0.0),            # berth A (departure stay ends)
            pt(1.0, 0.0, 1.0),            # pilotage A, off the berth
            pt(2.0, 0.0, 1.9),            # last point inside pilotage A
            pt(10.0, 0.0, 30.0),          # open sea
            pt(50.0, 0.0, 102.5),         # first point inside anchorage B
            pt(52.0, 0.0, 101.0),         # pilotage B
            pt(55.0, 0.0, 100.0),         # berth B
        ]
        records = segment_voyages(points, two_port_world(), STATIC)
        assert len(records) == 1
        rec = records[0]
        assert rec.duration == pytest.approx(48.0)
        assert (rec.start_port, rec.end_port) == ("A", "B")
        assert rec.terminal == "B-T1"
        assert rec.ata == T0 + timedelta(hours=50)
        assert rec.imo == STATIC.imo and rec.teu == 5000

    def test_no_berthing_gives_empty_list(self):
        points = [pt(h, 50.0, 50.0) for h in range(5)]
        assert segment_voyages(points, two_port_world(), STATIC) == []

    def test_missing_arrival_mark_is_skipped_and_counted(self):
        # jumps straight from pilotage A into berth B without touching the
        # B anchorage
        points = [
            pt(0.0, 0.0, 0.0),
            pt(2.0, 0.0, 1.9),
            pt(55.0, 0.0, 100.0),
        ]
        diag = SegmentationDiagnostics()
        assert segment_voyages(points, two_port_world(), STATIC, diag) == []
        assert diag.missing_arrival_mark == 1

    def test_same_port_berthings_skipped_and_counted(self):
        points = [
            pt(0.0, 0.0, 0.0),
            pt(1.0, 0.0, 1.0),
            pt(2.0, 0.0, 0.0),
        ]
        diag = SegmentationDiagnostics()
        assert segment_voyages(points, two_port_world(), STATIC, diag) == []
        assert diag.same_port_pair == 1

    def test_unsorted_points_rejected(self):
        points = [pt(1.0, 0.0, 0.0), pt(0.0, 0.0, 0.0)]
        with pytest.raises(IngestError, match="time-sorted"):
            segment_voyages(points, two_port_world(), STATIC)

    def test_replay_against_synthetic_ground_truth(self, small_world, small_world_records):
        # every scheduled voyage is recovered with its duration, terminal
        # and segment intact (the generator's schedule is the oracle)
        records, diag = small_world_records
        voyages = small_world.schedule.voyages
        assert len(records) == len(voyages)
        assert sum(diag.as_dict().values()) == 0
        by_key = {}
        for r in records:
            by_key.setdefault((r.imo, r.start_port, r.end_port), []).append(r)
        for v in voyages:
            cands = by_key[(v.imo, v.start_port, v.end_port)]
            err = min(abs(r.duration - v.duration) for r in cands)
            assert err * 3600 < 2.0  # seconds
        # terminals match the scheduled destination berth
        recovered = sorted((r.imo, round(r.duration, 3), r.terminal) for r in records)
        scheduled = sorted((v.imo, round(v.duration, 3), v.terminal) for v in voyages)
        assert recovered == scheduled

    def test_determinism(self, small_world):
        from voyagecast.synth import emit_ais

        tracks = emit_ais(small_world.schedule, 60.0)
        a = segment_all(tracks, small_world.geofences, small_world.statics, CFG)
        b = segment_all(tracks, small_world.geofences, small_world.statics, CFG)
        assert a == b

    def test_threaded_matches_sequential(self, small_world):
        from voyagecast.synth import emit_ais

        tracks = emit_ais(small_world.schedule, 60.0)
        a = segment_all(tracks, small_world.geofences, small_world.statics, CFG)
        b = segment_all(tracks, small_world.geofences, small_world.statics, CFG,
                        max_workers=4)
        assert a == b


class TestPortVesselCounts:
    def test_single_record_moves_counts(self, small_world_records):
        records, _ = small_world_records
        rec = records[0]
        counts = port_vessel_counts([rec], CFG)
        dep_w, arr_w = rec.window, window_of(rec.ata, CFG)
        start = counts[rec.start_port]
        end = counts[rec.end_port]
        assert start.at([dep_w - 1] if dep_w > 1 else [1])[0] in (0, -1)
        assert start.at([dep_w])[0] == -1
        assert end.at([arr_w])[0] == 1
        if arr_w > 1:
            assert end.at([arr_w - 1])[0] == 0

    def test_empty_records_give_empty_map(self):
        assert port_vessel_counts([], CFG) == {}

    def test_matches_event_tally_oracle(self, small_world_records):
        records, _ = small_world_records
        counts = port_vessel_counts(records, CFG)
        # independent tally: for each port and window, accumulate events
        events = {}
        for r in records:
            events.setdefault(r.start_port, []).append((r.window, -1))
            events.setdefault(r.end_port, []).append((window_of(r.ata, CFG), +1))
        for port, evs in events.items():
            last = max(w for w, _ in evs)
            expected = np.zeros(last + 6, dtype=int)
            for w, d in evs:
                expected[w:] += d
            got = counts[port].at(np.arange(1, last + 6))
            np.testing.assert_array_equal(got, expected[1:])

    def test_conservation_invariant(self, small_world_records):
        records, _ = small_world_records
        counts = port_vessel_counts(records, CFG)
        for port, series in counts.items():
            arrivals = np.zeros(len(series.counts) + 1, dtype=int)
            departures = np.zeros(len(series.counts) + 1, dtype=int)
            for r in records:
                if r.end_port == port:
                    w = window_of(r.ata, CFG)
                    if w <= len(series.counts):
                        arrivals[w] += 1
                if r.start_port == port and r.window <= len(series.counts):
                    departures[r.window] += 1
            values = series.at(np.arange(1, len(series.counts) + 1))
            diffs = np.diff(np.concatenate([[0], values]))
            np.testing.assert_array_equal(diffs, (arrivals - departures)[1:])


class TestFilterSegments:
    def test_threshold_is_strict(self, small_world_records):
        records, _ = small_world_records
        a = [r for r in records if (r.start_port, r.end_port)][:0]
        # synthetic tally: build a corpus with counts 80 and 10
        eighty = [records[0]] * 80
        ten = [next(r for r in records
                    if (r.start_port, r.end_port) != (records[0].start_port, records[0].end_port))] * 10
        res = filter_segments(eighty + ten + a, min_count=75)
        assert res.segments == {(records[0].start_port, records[0].end_port)}
        assert len(res.records) == 80

    def test_zero_threshold_keeps_all(self, small_world_records):
        records, _ = small_world_records
        res = filter_segments(records, min_count=0)
        assert len(res.records) == len(records)
        assert res.segments == {(r.start_port, r.end_port) for r in records}

    def test_matches_group_count_oracle(self, small_world_records):
        records, _ = small_world_records
        min_count = 30
        res = filter_segments(records, min_count)
        tally = {}
        for r in records:
            tally[(r.start_port, r.end_port)] = tally.get((r.start_port, r.end_port), 0) + 1
        assert res.segments == {k for k, v in tally.items() if v > min_count}

    def test_adjacency_matrix(self, small_world_records):
        records, _ = small_world_records
        res = filter_segments(records, 0)
        idx = res.port_index
        for s, e in res.segments:
            assert res.adjacency[idx[s], idx[e]] == 1
        assert res.adjacency.sum() == len(res.segments)


class TestRoundTrips:
    def test_voyage_records_csv(self, small_world_records, tmp_path):
        records, _ = small_world_records
        path = tmp_path / "records.csv"
        write_voyage_records(records, path)
        again = read_voyage_records(path)
        assert again == records

    def test_record_window_consistency(self, small_world_records):
        records, _ = small_world_records
        for r in records[:200]:
            assert r.window == window_of(r.departure, CFG)
            assert r.duration > 0

    def test_port_counts_csv(self, small_world_records, tmp_path):
        records, _ = small_world_records
        counts = port_vessel_counts(records, CFG)
        path = tmp_path / "counts.csv"
        write_port_counts(counts, path)
        again = read_port_counts(path)
        assert set(again) == set(counts)
        for port in counts:
            np.testing.assert_array_equal(again[port].counts, counts[port].counts)


class TestLoaders:
    def test_ais_file_round_trip(self, small_world, tmp_path):
        from voyagecast.synth import write_world

        paths = write_world(small_world, tmp_path, sample_interval_minutes=120.0)
        tracks = load_ais_tracks(paths["ais"])
        assert len(tracks) == small_world.spec.n_vessels
        statics = load_vessel_statics(paths["vessels"])
        assert statics == small_world.statics
        fences = load_geofences(paths["geofences"])
        assert sorted(f.port_id for f in fences) == sorted(
            f.port_id for f in small_world.geofences)
        # polygon membership survives the GeoJSON round trip
        for a, b in zip(sorted(fences, key=lambda f: f.port_id),
                        sorted(small_world.geofences, key=lambda f: f.port_id)):
            assert a.pilotage == b.pilotage
            assert a.anchorage == b.anchorage
            assert [x.ring for x in a.berths] == [x.ring for x in b.berths]

    def test_file_pipeline_matches_in_memory(self, small_world, small_world_records, tmp_path):
        from voyagecast.synth import write_world

        paths = write_world(small_world, tmp_path, sample_interval_minutes=30.0)
        tracks = load_ais_tracks(paths["ais"])
        statics = load_vessel_statics(paths["vessels"])
        fences = load_geofences(paths["geofences"])
        records = segment_all(tracks, fences, statics, small_world.timeline)
        in_memory, _ = small_world_records
        assert len(records) == len(in_memory)
        for a, b in zip(records, in_memory):
            assert (a.imo, a.start_port, a.end_port, a.window) == \
                (b.imo, b.start_port, b.end_port, b.window)
            assert abs(a.duration - b.duration) * 3600 < 1.0

    def test_duplicate_imo_rejected(self, tmp_path):
        path = tmp_path / "vessels.csv"
        path.write_text("IMO,MMSI,crrName,TEU,width,length\n"
                        "9,244,ACME,10,20,100\n9,245,ACME,10,20,100\n")
        with pytest.raises(IngestError, match="duplicate IMO"):
            load_vessel_statics(path)

    def test_out_of_range_coordinates_rejected(self, tmp_path):
        path = tmp_path / "ais.csv"
        path.write_text("createTime,IMO,MMSI,speed,latitude,longitude,head,draught\n"
                        "2021-01-01T00:00:00+00:00,9,244,0,95.0,0.0,0,5\n")
        with pytest.raises(IngestError, match="outside valid ranges"):
            load_ais_tracks(path)

    def test_vessel_static_validation(self):
        with pytest.raises(IngestError, match="TEU"):
            VesselStatic(imo="9", mmsi="244", carrier="A", teu=0, width=20, length=100)
