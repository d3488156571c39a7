import math

import numpy as np
import pytest

from carbonform import features
from carbonform.emissions import EmissionFactorTable
from carbonform.errors import ConstantColumn, EmptyNeighborhood, ZeroBuiltUpArea
from carbonform.features import (
    FEATURE_NAMES,
    GravityParams,
    TreatmentEncoder,
    aggregate_neighborhood,
    build_built_env,
    haversine_km,
    rank_centers,
    standardize_and_align,
    transit_accessibility,
    walk_minutes,
)
from carbonform.gtfs import Departure, GtfsBundle, Stop
from carbonform.ingest import HouseholdRecord, Mode, NeighborhoodRaw, PoiCategory, PoiRecord, TripRecord

FACTORS = EmissionFactorTable()
WEEKDAY = (True,) * 5 + (False, False)


def household(hh, nb="z1", ages=(40, 38), licenses=None, weight=1.0, **kw):
    defaults = dict(income=3000.0, size=len(ages), member_ages=tuple(ages),
                    uni_degrees_over25=0, cars=1, bikes=1,
                    driving_licenses_adults=min(1, sum(a > 18 for a in ages)),
                    transit_subscriptions=0, weight=weight)
    if licenses is not None:
        defaults["driving_licenses_adults"] = licenses
    defaults.update(kw)
    return HouseholdRecord(hh, nb, **defaults)


def bike_trips(hh, kg):
    # 20 g/pkm: 50 km per kg keeps the arithmetic exact
    return [TripRecord(hh, "p1", Mode.BIKE, 50.0 * kg)]


class TestAggregate:
    def test_outcome_unweighted_mean(self):
        hhs = [household("h1"), household("h2")]
        trips = {"h1": bike_trips("h1", 1.0), "h2": bike_trips("h2", 3.0)}
        outcome, _ = aggregate_neighborhood(hhs, trips, FACTORS, "z1", green_share=0.2, use_weights=False)
        assert outcome == 2.0

    def test_outcome_weighted_mean(self):
        hhs = [household("h1", weight=3.0), household("h2", weight=1.0)]
        trips = {"h1": bike_trips("h1", 1.0), "h2": bike_trips("h2", 3.0)}
        outcome, _ = aggregate_neighborhood(hhs, trips, FACTORS, "z1", green_share=0.2)
        assert outcome == pytest.approx(1.5)

    def test_child_excluded_from_age(self):
        hhs = [household("h1", ages=(10, 40, 50))]
        _, conf = aggregate_neighborhood(hhs, {}, FACTORS, "z1", green_share=0.2)
        assert conf.age == 45.0

    def test_license_share_over_adults(self):
        hhs = [household("h1", ages=(30, 40), licenses=1)]
        _, conf = aggregate_neighborhood(hhs, {}, FACTORS, "z1", green_share=0.2)
        assert conf.driving_license == 0.5

    def test_uni_share_base(self):
        hhs = [household("h1", ages=(30, 24), uni_degrees_over25=1)]
        _, conf = aggregate_neighborhood(hhs, {}, FACTORS, "z1", green_share=0.2)
        assert conf.uni_share == 1.0  # only the 30-year-old is in the base

    def test_ownership_rates(self):
        hhs = [household("h1", ages=(30, 8), cars=2, bikes=3, transit_subscriptions=2)]
        _, conf = aggregate_neighborhood(hhs, {}, FACTORS, "z1", green_share=0.2)
        assert conf.car_ownership == 2.0
        assert conf.bike_ownership == 1.5
        assert conf.transit_subscription == 1.0

    def test_empty_neighborhood(self):
        with pytest.raises(EmptyNeighborhood):
            aggregate_neighborhood([], {}, FACTORS, "z1", green_share=0.2)

    def test_green_share_passthrough(self):
        _, conf = aggregate_neighborhood([household("h1")], {}, FACTORS, "z1", green_share=0.33)
        assert conf.green_share == 0.33


class TestCenters:
    def test_argmax_and_topk(self):
        center, subs = rank_centers({"A": 5.0, "B": 9.0, "C": 2.0})
        assert center == "B"
        assert subs == ["B", "A", "C"]

    def test_tie_breaks_to_lower_id(self):
        center, _ = rank_centers({"B": 5.0, "A": 5.0})
        assert center == "A"

    def test_exactly_ten_subcenters(self):
        densities = {f"z{i:02d}": float(i) for i in range(12)}
        _, subs = rank_centers(densities)
        assert len(subs) == 10

    def test_empty(self):
        with pytest.raises(EmptyNeighborhood):
            rank_centers({})


class TestHaversine:
    def test_identity(self):
        assert haversine_km((52.52, 13.405), (52.52, 13.405)) == 0.0

    def test_lon_offset_against_oracle(self):
        # independent oracle: spherical law of cosines
        p, q = (52.5, 13.4), (52.5, 13.5)
        lat1, lon1, lat2, lon2 = map(math.radians, (*p, *q))
        oracle = 6371.0088 * math.acos(
            min(1.0, math.sin(lat1) * math.sin(lat2) + math.cos(lat1) * math.cos(lat2) * math.cos(lon2 - lon1))
        )
        assert haversine_km(p, q) == pytest.approx(oracle, abs=1e-9)
        assert haversine_km(p, q) == pytest.approx(6.77, abs=0.01)

    def test_symmetry(self, rng):
        for _ in range(50):
            p = (rng.uniform(-80, 80), rng.uniform(-179, 179))
            q = (rng.uniform(-80, 80), rng.uniform(-179, 179))
            assert haversine_km(p, q) == haversine_km(q, p)


class TestGravity:
    CENTER = (52.5, 13.4)

    def bundle(self, stops, departures):
        return GtfsBundle(stops=stops, departures=departures)

    def stop_at_walk_minutes(self, minutes, params=GravityParams()):
        km = minutes * params.walk_speed_kmh / 60.0 / params.detour_factor
        dlat = math.degrees(km / 6371.0088)
        return Stop("S1", self.CENTER[0] + dlat, self.CENTER[1])

    def test_no_stops_zero(self):
        assert transit_accessibility(self.CENTER, self.bundle([], [])) == 0.0

    def test_single_stop_closed_form(self):
        stop = self.stop_at_walk_minutes(5.0)
        deps = [Departure("S1", 7 * 3600 + i * 300, WEEKDAY) for i in range(24)]  # 12/hour
        value = transit_accessibility(self.CENTER, self.bundle([stop], deps))
        assert value == pytest.approx(12.0 * math.exp(-0.5), abs=1e-3)

    def test_linear_in_frequency(self):
        stop = self.stop_at_walk_minutes(8.0)
        deps = [Departure("S1", 7 * 3600 + i * 600, WEEKDAY) for i in range(12)]
        single = transit_accessibility(self.CENTER, self.bundle([stop], deps))
        double = transit_accessibility(self.CENTER, self.bundle([stop], deps + [
            Departure("S1", d.seconds + 60, WEEKDAY) for d in deps]))
        assert double == pytest.approx(2.0 * single, rel=1e-12)

    def test_cutoff_excludes_distant_stop(self):
        stop = self.stop_at_walk_minutes(31.0)
        deps = [Departure("S1", 8 * 3600, WEEKDAY)]
        assert transit_accessibility(self.CENTER, self.bundle([stop], deps)) == 0.0

    def test_window_boundaries(self):
        stop = self.stop_at_walk_minutes(5.0)
        inside = Departure("S1", 7 * 3600, WEEKDAY)
        at_end = Departure("S1", 9 * 3600, WEEKDAY)
        with_one = transit_accessibility(self.CENTER, self.bundle([stop], [inside]))
        with_both = transit_accessibility(self.CENTER, self.bundle([stop], [inside, at_end]))
        assert with_one > 0.0
        assert with_both == with_one  # 09:00:00 departure is outside [07:00, 09:00)


def make_neighborhood(nb_id, lat, lon, population=20000, built=4.0, express=3.0,
                      intersections=800, mixed=0.4):
    return NeighborhoodRaw(
        neighborhood_id=nb_id, centroid=(lat, lon), population=population,
        built_up_area_km2=built, mixed_use_share=mixed, expressway_km=express,
        intersections=intersections, green_vote_share=0.25,
    )


class TestBuiltEnv:
    def setup_method(self):
        self.nbs = [
            make_neighborhood("A", 52.50, 13.40, population=20000, built=4.0, express=3.0),
            make_neighborhood("B", 52.54, 13.45, population=15000, built=3.0, express=3.0),
            make_neighborhood("C", 52.58, 13.50, population=5000, built=2.5, express=6.0),
        ]
        self.pois = (
            [PoiRecord(52.501, 13.401, PoiCategory.OFFICE) for _ in range(8)]
            + [PoiRecord(52.541, 13.451, PoiCategory.SCHOOL) for _ in range(3)]
            + [PoiRecord(52.501, 13.402, PoiCategory.OTHER) for _ in range(50)]  # ignored
        )
        self.gtfs = GtfsBundle(stops=[], departures=[])

    def test_densities_and_ratios(self):
        env = build_built_env(self.nbs, self.pois, self.gtfs)
        assert env["A"].pop_density == 5000.0
        assert env["B"].car_friendliness == pytest.approx(0.2)
        assert env["A"].poi_density == pytest.approx(8 / 4.0)
        assert env["A"].walkability == pytest.approx(800 / 4.0)

    def test_center_distance_zero_at_center(self):
        env = build_built_env(self.nbs, self.pois, self.gtfs)
        assert env["A"].dist_center == 0.0  # A has the highest destination density

    def test_subcenter_not_farther_than_center(self):
        env = build_built_env(self.nbs, self.pois, self.gtfs)
        for nb in self.nbs:
            v = env[nb.neighborhood_id]
            assert v.dist_subcenter <= v.dist_center + 1e-12

    def test_zero_built_up_area(self):
        bad = [make_neighborhood("A", 52.5, 13.4, built=0.0)]
        with pytest.raises(ZeroBuiltUpArea):
            build_built_env(bad, [], self.gtfs)

    def test_zero_population_car_friendliness(self):
        nbs = [make_neighborhood("A", 52.5, 13.4, population=0),
               make_neighborhood("B", 52.6, 13.5)]
        env = build_built_env(nbs, [], self.gtfs)
        assert env["A"].car_friendliness == 0.0


class TestTreatmentEncoding:
    def matrix(self, rng, n=30):
        return rng.uniform(0.5, 2.0, size=(n, len(FEATURE_NAMES))) * np.arange(1, 9)

    def test_three_point_column(self):
        m = np.tile(np.linspace(1, 2, 3)[:, None], (1, 8))
        m[:, 0] = [1.0, 2.0, 3.0]
        z, _ = standardize_and_align(m)
        aligned = -z[:, 0]  # dist_center is sign-flipped; undo for the raw z-score
        assert aligned == pytest.approx([-1.2247, 0.0, 1.2247], abs=1e-4)

    def test_mean_zero_sd_one(self, rng):
        t, _ = standardize_and_align(self.matrix(rng))
        assert np.abs(t.mean(axis=0)).max() < 1e-9
        assert np.abs(t.std(axis=0) - 1.0).max() < 1e-9

    def test_flip_set(self):
        assert features.FLIPPED_FEATURES == ("dist_center", "dist_subcenter", "car_friendliness")

    def test_direction_alignment(self, rng):
        m = self.matrix(rng)
        t, _ = standardize_and_align(m)
        for name in features.FLIPPED_FEATURES:
            j = FEATURE_NAMES.index(name)
            # raw maximum maps to the most negative aligned value
            assert np.argmax(m[:, j]) == np.argmin(t[:, j])
            assert np.corrcoef(m[:, j], t[:, j])[0, 1] <= 0

    def test_constant_column(self, rng):
        m = self.matrix(rng)
        m[:, 3] = 7.7
        with pytest.raises(ConstantColumn, match="pop_density"):
            standardize_and_align(m)

    def test_permutation_invariance(self, rng):
        m = self.matrix(rng)
        t1, _ = standardize_and_align(m)
        perm = rng.permutation(len(m))
        t2, _ = standardize_and_align(m[perm])
        assert np.allclose(t2, t1[perm], atol=1e-12)

    def test_held_out_transform(self, rng):
        m = self.matrix(rng)
        _, enc = standardize_and_align(m)
        row = self.matrix(rng, n=1)[0]
        expected = np.array(enc.signs) * (row - np.array(enc.means)) / np.array(enc.sds)
        assert np.allclose(enc.transform(row), expected - np.array(enc.city_average))

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            TreatmentEncoder.fit(np.ones((1, 8)))


class TestWalkModel:
    def test_walk_minutes(self):
        # 1 km at 4.5 km/h with detour 1.3: 1*1.3/4.5*60
        assert walk_minutes(1.0) == pytest.approx(1.3 / 4.5 * 60.0)


class TestProfiles:
    def test_build_and_round_trip(self, small_city, tmp_path):
        path, _, _ = small_city
        from carbonform import gtfs as gtfs_mod
        from carbonform import ingest

        shares, _ = ingest.parse_elections(path / "elections.csv")
        nbs = ingest.parse_neighborhoods(path / "neighborhoods.geojson", shares).raise_on_issues()
        hhs = ingest.parse_households(path / "households.csv").raise_on_issues()
        trips = ingest.parse_trips(path / "trips.csv").raise_on_issues()
        pois = ingest.parse_pois(path / "pois.csv").raise_on_issues()
        bundle = gtfs_mod.parse_gtfs(path / "gtfs")
        profiles, encoder = features.build_profiles(nbs, hhs, trips, pois, bundle, FACTORS)
        assert len(profiles) == len(nbs)
        assert all(p.treatment is not None for p in profiles)
        ids = [p.neighborhood_id for p in profiles]
        assert ids == sorted(ids)

        out = tmp_path / "profiles.json"
        features.save_profiles(profiles, encoder, out)
        loaded, enc2 = features.load_profiles(out)
        assert loaded == profiles
        assert enc2 == encoder

    def test_low_support_flag(self, small_city):
        path, spec, _ = small_city
        from carbonform import gtfs as gtfs_mod
        from carbonform import ingest

        shares, _ = ingest.parse_elections(path / "elections.csv")
        nbs = ingest.parse_neighborhoods(path / "neighborhoods.geojson", shares).raise_on_issues()
        hhs = ingest.parse_households(path / "households.csv").raise_on_issues()
        trips = ingest.parse_trips(path / "trips.csv").raise_on_issues()
        pois = ingest.parse_pois(path / "pois.csv").raise_on_issues()
        bundle = gtfs_mod.parse_gtfs(path / "gtfs")
        cutoff = spec.households_low + 3
        profiles, _ = features.build_profiles(
            nbs, hhs, trips, pois, bundle, FACTORS, min_households=cutoff
        )
        flagged = [p for p in profiles if p.low_support]
        assert flagged, "expected some low-support neighborhoods at a raised cutoff"
        for p in profiles:
            assert p.low_support == (p.n_households_sampled < cutoff)
