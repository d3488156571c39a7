import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carbonform import ingest
from carbonform.errors import MissingFile
from carbonform.ingest import (
    HouseholdRecord,
    Mode,
    PlannedUnits,
    PoiCategory,
    PoiRecord,
    TripRecord,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestTrips:
    def test_basic_row(self, tmp_path):
        p = write(tmp_path, "trips.csv", "household_id,person_id,mode,distance_km\nh1,p1,car,10.0\n")
        result = ingest.parse_trips(p)
        assert result.ok
        assert result.records == [TripRecord("h1", "p1", Mode.CAR, 10.0, 1.0)]

    def test_mode_case_insensitive(self, tmp_path):
        p = write(tmp_path, "trips.csv", "household_id,person_id,mode,distance_km\nh1,p1,FoOt,2.5\n")
        assert ingest.parse_trips(p).records[0].mode is Mode.FOOT

    def test_unknown_mode(self, tmp_path):
        p = write(tmp_path, "trips.csv", "household_id,person_id,mode,distance_km\nh1,p1,teleport,3\n")
        result = ingest.parse_trips(p)
        assert not result.records
        assert result.issues[0].kind == "unknown_mode"
        assert result.issues[0].row == 1

    def test_negative_distance(self, tmp_path):
        p = write(tmp_path, "trips.csv", "household_id,person_id,mode,distance_km\nh1,p1,bike,-2\n")
        issue = ingest.parse_trips(p).issues[0]
        assert issue.kind == "negative_distance"

    def test_parsing_is_total(self, tmp_path):
        rows = ["h1,p1,car,1.0", "h2,p2,warp,2", "h3,p3,bike,-1", "h4,p4,foot,0.4", "bad"]
        p = write(tmp_path, "trips.csv", "household_id,person_id,mode,distance_km\n" + "\n".join(rows) + "\n")
        result = ingest.parse_trips(p)
        assert len(result.records) + len(result.issues) == len(rows)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFile):
            ingest.parse_trips(tmp_path / "absent.csv")

    @settings(max_examples=25, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.sampled_from(list(Mode)),
                st.floats(min_value=0, max_value=500, allow_nan=False),
                st.floats(min_value=0.1, max_value=5, allow_nan=False),
            ),
            max_size=8,
        )
    )
    def test_round_trip(self, tmp_path_factory, rows):
        trips = [TripRecord(f"h{i}", "p1", m, d, w) for i, (m, d, w) in enumerate(rows)]
        path = tmp_path_factory.mktemp("rt") / "trips.csv"
        ingest.write_trips_csv(trips, path)
        parsed = ingest.parse_trips(path)
        assert parsed.ok
        assert parsed.records == trips


class TestHouseholds:
    HEADER = (
        "household_id,neighborhood_id,income,size,member_ages,uni_degrees_over25,"
        "cars,bikes,driving_licenses_adults,transit_subscriptions,weight\n"
    )

    def test_valid_row(self, tmp_path):
        p = write(tmp_path, "households.csv", self.HEADER + "h1,z1,3000,3,40|38|9,1,1,2,2,1,1.0\n")
        result = ingest.parse_households(p)
        assert result.ok
        h = result.records[0]
        assert h.n_adults == 2 and h.n_over_degree_age == 2

    def test_license_exceeds_adults(self, tmp_path):
        p = write(tmp_path, "households.csv", self.HEADER + "h1,z1,3000,2,40|10,0,1,1,2,0,1.0\n")
        issue = ingest.parse_households(p).issues[0]
        assert issue.kind == "invalid_household"
        assert "driving_licenses" in issue.message

    def test_size_age_mismatch(self, tmp_path):
        p = write(tmp_path, "households.csv", self.HEADER + "h1,z1,3000,3,40|38,0,0,0,0,0,1.0\n")
        assert ingest.parse_households(p).issues[0].kind == "invalid_household"

    def test_round_trip(self, tmp_path):
        records = [
            HouseholdRecord("h1", "z1", 2500.5, 2, (34, 5), 1, 0, 3, 1, 2, 1.25),
            HouseholdRecord("h2", "z2", 4100.0, 1, (71,), 0, 2, 0, 1, 0, 0.8),
        ]
        path = tmp_path / "households.csv"
        ingest.write_households_csv(records, path)
        assert ingest.parse_households(path).records == records


class TestNeighborhoods:
    @staticmethod
    def feature(nb_id="10115", green=0.3, ring=None):
        props = {
            "neighborhood_id": nb_id,
            "population": 20000,
            "built_up_area_km2": 4.0,
            "mixed_use_share": 0.4,
            "expressway_km": 3.0,
            "intersections": 500,
            "rail_stations": [[52.53, 13.40]],
            "inside_or_on_ringbahn": True,
        }
        if green is not None:
            props["green_vote_share"] = green
        geometry = ring or {
            "type": "Polygon",
            "coordinates": [[[13.0, 52.0], [13.1, 52.0], [13.1, 52.1], [13.0, 52.1], [13.0, 52.0]]],
        }
        return {"type": "Feature", "geometry": geometry, "properties": props}

    def write_fc(self, tmp_path, features):
        return write(tmp_path, "n.geojson", json.dumps({"type": "FeatureCollection", "features": features}))

    def test_polygon_reduced_to_centroid(self, tmp_path):
        p = self.write_fc(tmp_path, [self.feature()])
        result = ingest.parse_neighborhoods(p)
        assert result.ok
        nb = result.records[0]
        assert nb.centroid == pytest.approx((52.05, 13.05))
        assert nb.boundary is not None and len(nb.boundary) == 5

    def test_short_ring_rejected(self, tmp_path):
        bad = {"type": "Polygon", "coordinates": [[[13.0, 52.0], [13.1, 52.0], [13.0, 52.0]]]}
        p = self.write_fc(tmp_path, [self.feature(ring=bad)])
        result = ingest.parse_neighborhoods(p)
        assert result.issues[0].kind == "malformed_geometry"

    def test_unclosed_ring_rejected(self, tmp_path):
        bad = {"type": "Polygon", "coordinates": [[[13.0, 52.0], [13.1, 52.0], [13.1, 52.1], [13.0, 52.1]]]}
        p = self.write_fc(tmp_path, [self.feature(ring=bad)])
        assert ingest.parse_neighborhoods(p).issues[0].kind == "malformed_geometry"

    def test_green_share_from_elections(self, tmp_path):
        p = self.write_fc(tmp_path, [self.feature(green=None)])
        result = ingest.parse_neighborhoods(p, elections={"10115": 0.22})
        assert result.ok
        assert result.records[0].green_vote_share == 0.22

    def test_green_share_missing_everywhere(self, tmp_path):
        p = self.write_fc(tmp_path, [self.feature(green=None)])
        assert not ingest.parse_neighborhoods(p).ok

    def test_share_out_of_range(self, tmp_path):
        p = self.write_fc(tmp_path, [self.feature(green=1.4)])
        assert ingest.parse_neighborhoods(p).issues[0].kind == "invalid_neighborhood"

    def test_round_trip(self, tmp_path):
        p = self.write_fc(tmp_path, [self.feature()])
        records = ingest.parse_neighborhoods(p).raise_on_issues()
        out = tmp_path / "rt.geojson"
        ingest.write_neighborhoods_geojson(records, out)
        again = ingest.parse_neighborhoods(out).raise_on_issues()
        assert again == records


class TestPoisPlannedElections:
    def test_poi_parse_and_bbox(self, tmp_path):
        p = write(tmp_path, "pois.csv", "lat,lon,category\n52.5,13.4,office\n60.0,13.4,school\n")
        result = ingest.parse_pois(p, bounding_box=(52.0, 13.0, 53.0, 14.0))
        assert result.records == [PoiRecord(52.5, 13.4, PoiCategory.OFFICE)]
        assert result.issues[0].kind == "out_of_bounds"

    def test_planned_units_row(self, tmp_path):
        p = write(tmp_path, "planned.csv", "neighborhood_id,units\n10115,1200\n")
        assert ingest.parse_planned_units(p).records == [PlannedUnits("10115", 1200)]

    def test_planned_units_negative(self, tmp_path):
        p = write(tmp_path, "planned.csv", "neighborhood_id,units\n10115,-5\n")
        assert ingest.parse_planned_units(p).issues[0].kind == "malformed_row"

    def test_elections(self, tmp_path):
        p = write(tmp_path, "elections.csv", "neighborhood_id,green_share\n10115,0.25\n10117,1.5\n")
        shares, issues = ingest.parse_elections(p)
        assert shares == {"10115": 0.25}
        assert len(issues) == 1
