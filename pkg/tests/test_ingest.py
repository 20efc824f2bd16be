import io
from datetime import datetime

import numpy as np
import pytest

from stardemand.errors import DataError
from stardemand.ingest import (
    IngestReport, TripFormat, TripRecord,
    assign_zone, bin_counts, make_zone, parse_trips,
    load_zones_centroid_csv, load_zones_geojson,
)


def _csv(rows):
    return io.StringIO("Date/Time,Lat,Lon\n" + "\n".join(rows) + "\n")


def square(x0, y0, size=1.0):
    return [(x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size), (x0, y0)]


class TestParseTrips:
    def test_direct_parse(self):
        trips = parse_trips(_csv(['"4/16/2014 0:03:00",40.75,-73.99']))
        assert trips == [TripRecord(datetime(2014, 4, 16, 0, 3), 40.75, -73.99)]

    def test_lat_out_of_range(self):
        report = IngestReport()
        trips = parse_trips(_csv(['"4/16/2014 0:03:00",95.0,-73.99']), report=report)
        assert trips == []
        assert report.row_errors[0].message == "lat out of range: 95.0"
        assert report.row_errors[0].line == 2

    def test_empty_file(self):
        report = IngestReport()
        assert parse_trips(io.StringIO(""), report=report) == []
        assert report.row_errors == []

    def test_strict_aborts(self):
        with pytest.raises(DataError, match="line 2"):
            parse_trips(_csv(["garbage,1,2"]), policy="strict")

    def test_skip_keeps_order(self):
        trips = parse_trips(_csv([
            '"4/16/2014 0:05:00",40.7,-74.0',
            "bad,1,2",
            '"4/16/2014 0:01:00",40.8,-73.9',
        ]))
        assert [t.pickup_time.minute for t in trips] == [5, 1]

    def test_custom_columns(self):
        stream = io.StringIO("ts,latitude,longitude\n2014-04-16 00:03:00,40.75,-73.99\n")
        fmt = TripFormat(time_column="ts", lat_column="latitude",
                         lon_column="longitude",
                         timestamp_format="%Y-%m-%d %H:%M:%S")
        assert len(parse_trips(stream, fmt)) == 1


class TestAssignZone:
    zones = [
        make_zone("A", polygon=square(0, 0)),
        make_zone("B", polygon=square(1, 0)),
    ]

    def test_strict_containment(self):
        assert assign_zone((1.5, 0.5), self.zones) == "B"

    def test_shared_edge_lowest_id(self):
        assert assign_zone((1.0, 0.5), self.zones) == "A"

    def test_outside_drop(self):
        assert assign_zone((5.0, 5.0), self.zones) is None

    def test_outside_nearest(self):
        zones = [make_zone("A", centroid=(0.0, 1.0)), make_zone("B", centroid=(0.0, 2.0))]
        assert assign_zone((0.0, 0.0), zones, policy="nearest") == "A"

    def test_no_zones(self):
        with pytest.raises(DataError):
            assign_zone((0, 0), [])


def _trip(h, m, lat=0.5, lon=0.5):
    return TripRecord(datetime(2014, 4, 16, h, m), lat, lon)


class TestBinCounts:
    zones = [make_zone("A", polygon=square(0, 0))]

    def test_floor_convention(self):
        panel = bin_counts([_trip(0, 3), _trip(0, 14), _trip(0, 16)], self.zones)
        assert panel.values[0, 0] == 2
        assert panel.values[0, 1] == 1

    def test_boundary_goes_to_next_bin(self):
        panel = bin_counts([TripRecord(datetime(2014, 4, 16, 0, 15, 0), 0.5, 0.5)],
                           self.zones)
        assert panel.values[0, 1] == 1
        assert panel.values[0, 0] == 0

    def test_one_day_96_bins(self):
        panel = bin_counts([_trip(12, 0)], self.zones)
        assert panel.T == 96

    def test_27_zones_full_day(self):
        zones = [make_zone(f"tad{i:02d}", polygon=square(i, 0)) for i in range(27)]
        rng = np.random.default_rng(3)
        trips = [TripRecord(datetime(2014, 4, 16, int(h), int(m)),
                            0.5, float(z) + 0.5)
                 for h, m, z in zip(rng.integers(0, 24, 200),
                                    rng.integers(0, 60, 200),
                                    rng.integers(0, 27, 200))]
        panel = bin_counts(trips, zones)
        assert (panel.k, panel.T) == (27, 96)
        assert panel.values.sum() == 200

    def test_conservation_and_drops(self):
        report = IngestReport()
        trips = [_trip(0, 3), _trip(0, 4, lat=9.0, lon=9.0)]
        panel = bin_counts(trips, self.zones, report=report)
        assert panel.values.sum() == report.assigned == 1
        assert report.dropped_unassigned == 1

    def test_order_independence(self):
        rng = np.random.default_rng(4)
        trips = [_trip(int(h), int(m)) for h, m in
                 zip(rng.integers(0, 24, 50), rng.integers(0, 60, 50))]
        a = bin_counts(trips, self.zones)
        shuffled = list(trips)
        rng.shuffle(shuffled)
        b = bin_counts(shuffled, self.zones)
        assert np.array_equal(a.values, b.values)

    def test_range_abort(self):
        day = (datetime(2014, 4, 16), datetime(2014, 4, 17))
        late = TripRecord(datetime(2014, 4, 18, 1, 0), 0.5, 0.5)
        with pytest.raises(DataError, match="outside range"):
            bin_counts([late], self.zones, day_range=day, range_policy="abort")

    def test_bad_bin_minutes(self):
        with pytest.raises(DataError):
            bin_counts([_trip(0, 1)], self.zones, bin_minutes=7)


class TestZoneLoaders:
    def test_geojson(self, tmp_path):
        doc = {
            "type": "FeatureCollection",
            "features": [{
                "type": "Feature",
                "properties": {"zone_id": "A"},
                "geometry": {"type": "Polygon",
                             "coordinates": [list(square(0, 0))]},
            }],
        }
        path = tmp_path / "zones.geojson"
        import json
        path.write_text(json.dumps(doc))
        zones = load_zones_geojson(path)
        assert zones[0].zone_id == "A"
        assert zones[0].centroid == (0.5, 0.5)

    def test_centroid_csv(self, tmp_path):
        path = tmp_path / "zones.csv"
        path.write_text("zone_id,lon,lat\nA,1.0,2.0\nB,3.0,4.0\n")
        zones = load_zones_centroid_csv(path)
        assert [z.zone_id for z in zones] == ["A", "B"]
        assert zones[1].centroid == (3.0, 4.0)

    def test_geojson_missing_zone_id(self, tmp_path):
        path = tmp_path / "bad.geojson"
        path.write_text('{"type": "FeatureCollection", "features": [{"properties": {}}]}')
        with pytest.raises(DataError, match="zone_id"):
            load_zones_geojson(path)
