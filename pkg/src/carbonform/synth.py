"""Synthetic data with known ground truth.

Two layers: array-level data-generating processes used as estimator
oracles (confounded treatment, planted heterogeneity or moderation), and
a file-level demo-city generator that emits every input format the
parsers consume plus a ``truth.csv`` with the planted effects. The city
generator writes the raw files first and re-parses them through the
regular ingest path, so generated truth is exact with respect to what
the pipeline will see.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import features as feats
from . import gtfs as gtfs_mod
from . import ingest
from .emissions import DEFAULT_FACTORS_G_PER_PKM, EmissionFactorTable
from .ingest import HouseholdRecord, Mode, NeighborhoodRaw, PlannedUnits, PoiRecord, TripRecord
from .seeding import spawn_rng


# ---------------------------------------------------------------------------
# array-level DGPs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Confounded DGP: x drives treatment take-up and the outcome level.

    ``T_j = selection * (x_{j mod p} - 0.5) + noise``;
    ``Y = outcome_confounding * x_0 + theta(x) . T + noise``.
    The first treatment dimension's effect is
    ``theta_base + theta_jump * 1[x_0 > 0.5] + theta_slope * x_0``;
    further dimensions get ``theta_base / 2`` each.
    """

    n: int = 2000
    n_confounders: int = 5
    n_treatments: int = 1
    theta_base: float = 1.5
    theta_jump: float = 0.0
    theta_slope: float = 0.0
    selection: float = 2.0
    outcome_confounding: float = 5.0
    noise_t: float = 0.5
    noise_y: float = 0.5
    seed: int = 0


def generate(spec: SyntheticSpec) -> dict:
    """Draw one dataset; returns X, T, Y plus the planted theta, g and noise."""
    rng = spawn_rng(spec.seed, "dgp")
    n, p, d = spec.n, spec.n_confounders, spec.n_treatments
    X = rng.uniform(size=(n, p))
    T = np.empty((n, d))
    for j in range(d):
        T[:, j] = spec.selection * (X[:, j % p] - 0.5) + spec.noise_t * rng.standard_normal(n)
    theta = np.empty((n, d))
    theta[:, 0] = (
        spec.theta_base
        + spec.theta_jump * (X[:, 0] > 0.5)
        + spec.theta_slope * X[:, 0]
    )
    for j in range(1, d):
        theta[:, j] = spec.theta_base / 2.0
    g = spec.outcome_confounding * X[:, 0]
    noise = spec.noise_y * rng.standard_normal(n)
    Y = g + np.sum(theta * T, axis=1) + noise
    return {"X": X, "T": T, "Y": Y, "theta": theta, "g": g, "noise": noise}


def naive_ols(T: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Treatment coefficients of the unadjusted regression (with intercept)."""
    T = np.atleast_2d(T.T).T
    A = np.column_stack([np.ones(len(Y)), T])
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    return coef[1:]


# ---------------------------------------------------------------------------
# demo city
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CitySpec:
    n_neighborhoods: int = 190
    grid_cols: int = 14
    center: tuple[float, float] = (52.5, 13.4)
    lat_step: float = 0.018
    lon_step: float = 0.03
    households_low: int = 12
    households_high: int = 40
    noise_y: float = 0.12
    theta_scale: float = 1.0
    moderation: float = 0.6  # car-ownership scaling of all effect components
    planned_total_units: int = 64000
    planned_sites: int = 24
    rail_neighborhoods: int = 40
    ring_radius_km: float = 5.5
    seed: int = 0


#: Per-feature effect magnitudes (kg CO2e per household-day per aligned sd),
#: negative because larger aligned values mean more compact form.
CITY_BASE_THETA = np.array([-0.22, -0.09, -0.05, -0.07, -0.012, -0.04, -0.035, -0.025])


@dataclass
class CityTruth:
    neighborhood_ids: list[str]
    theta: np.ndarray  # (n, 8)
    total_effect: np.ndarray  # (n,)
    g: np.ndarray  # (n,)
    noise: np.ndarray  # (n,)
    outcome: np.ndarray  # (n,)


def _city_layout(spec: CitySpec, rng) -> tuple[list[str], np.ndarray, np.ndarray]:
    """ids, centroids (n, 2), compactness u in (0, 1)."""
    rows = math.ceil(spec.n_neighborhoods / spec.grid_cols)
    ids, centroids = [], []
    for k in range(spec.n_neighborhoods):
        r, c = divmod(k, spec.grid_cols)
        lat = spec.center[0] + (r - (rows - 1) / 2.0) * spec.lat_step
        lon = spec.center[1] + (c - (spec.grid_cols - 1) / 2.0) * spec.lon_step
        ids.append(str(10000 + k))
        centroids.append((lat, lon))
    centroids = np.array(centroids)
    dists = np.array([feats.haversine_km(tuple(c), spec.center) for c in centroids])
    u = 1.0 - dists / (dists.max() * 0.95) + 0.08 * rng.standard_normal(len(dists))
    return ids, centroids, np.clip(u, 0.03, 0.97)


def _city_neighborhoods(spec, rng, ids, centroids, u) -> tuple[list[NeighborhoodRaw], dict[str, float]]:
    cell_area = (spec.lat_step * 111.19) * (spec.lon_step * 111.19 * math.cos(math.radians(spec.center[0])))
    rail_rank = np.argsort(-u)[: spec.rail_neighborhoods]
    rail_set = set(int(i) for i in rail_rank)
    records = []
    elections: dict[str, float] = {}
    for k, nb_id in enumerate(ids):
        lat, lon = float(centroids[k][0]), float(centroids[k][1])
        built_share = 0.25 + 0.65 * float(u[k])
        built_up = float(cell_area * built_share)
        population = int(2000 + 26000 * u[k] ** 1.2 * (1.0 + 0.15 * rng.standard_normal()))
        population = max(population, 400)
        boundary = (
            (lat - spec.lat_step / 2, lon - spec.lon_step / 2),
            (lat - spec.lat_step / 2, lon + spec.lon_step / 2),
            (lat + spec.lat_step / 2, lon + spec.lon_step / 2),
            (lat + spec.lat_step / 2, lon - spec.lon_step / 2),
            (lat - spec.lat_step / 2, lon - spec.lon_step / 2),
        )
        stations = ()
        if k in rail_set:
            stations = ((lat + 0.001, lon - 0.0015),)
        dist_geo = feats.haversine_km((lat, lon), spec.center)
        records.append(
            NeighborhoodRaw(
                neighborhood_id=nb_id,
                centroid=(lat, lon),
                population=population,
                built_up_area_km2=built_up,
                mixed_use_share=float(np.clip(0.08 + 0.55 * u[k] + 0.05 * rng.standard_normal(), 0.0, 1.0)),
                expressway_km=float(max(0.0, (1.0 - u[k]) * 5.0 + 1.2 * rng.standard_normal())),
                intersections=int(built_up * (30 + 230 * u[k])),
                green_vote_share=0.0,  # filled from elections.csv
                rail_station_centroids=stations,
                inside_or_on_ringbahn=bool(dist_geo <= spec.ring_radius_km),
                boundary=boundary,
            )
        )
        elections[nb_id] = float(np.clip(0.12 + 0.3 * u[k] + 0.05 * rng.standard_normal(), 0.0, 0.6))
    return records, elections


def _city_pois(rng, ids, centroids, u) -> list[PoiRecord]:
    categories = list(ingest.DESTINATION_CATEGORIES)
    pois = []
    for k in range(len(ids)):
        lat, lon = float(centroids[k][0]), float(centroids[k][1])
        n_dest = int(rng.poisson(4 + 110 * u[k] ** 2))
        for _ in range(n_dest):
            pois.append(
                PoiRecord(
                    lat=float(lat + rng.uniform(-0.005, 0.005)),
                    lon=float(lon + rng.uniform(-0.005, 0.005)),
                    category=categories[int(rng.integers(len(categories)))],
                )
            )
        for _ in range(int(rng.poisson(1 + 10 * u[k]))):
            pois.append(
                PoiRecord(
                    lat=float(lat + rng.uniform(-0.005, 0.005)),
                    lon=float(lon + rng.uniform(-0.005, 0.005)),
                    category=ingest.PoiCategory.OTHER,
                )
            )
    return pois


def _city_gtfs(rng, ids, centroids, u) -> tuple[list[gtfs_mod.Stop], list[tuple[str, int]]]:
    stops, departures = [], []
    for k, nb_id in enumerate(ids):
        if u[k] < 0.28:
            continue
        lat, lon = float(centroids[k][0]), float(centroids[k][1])
        stop = gtfs_mod.Stop(f"S{nb_id}", float(lat + rng.uniform(-0.002, 0.002)), float(lon + rng.uniform(-0.002, 0.002)))
        stops.append(stop)
        per_hour = 3.0 + 26.0 * u[k]
        count = max(1, int(round(2 * per_hour)))
        for i in range(count):
            departures.append((stop.stop_id, 7 * 3600 + int(i * 7200 / count)))
        departures.append((stop.stop_id, 6 * 3600 + 1800))  # outside the window
        departures.append((stop.stop_id, 10 * 3600 + 900))
    return stops, departures


def _city_households(spec, rng, ids, u) -> list[HouseholdRecord]:
    households = []
    serial = 0
    for k, nb_id in enumerate(ids):
        n_h = int(rng.integers(spec.households_low, spec.households_high + 1))
        income_mean = 2400 + 1000 * (1 - u[k]) + 250 * rng.standard_normal()
        size_mean = 1.5 + 1.2 * (1 - u[k])
        share_children = 0.10 + 0.18 * (1 - u[k])
        adult_age_mean = 32 + 16 * (1 - u[k])
        uni_rate = float(np.clip(0.18 + 0.5 * u[k], 0.05, 0.9))
        car_rate = max(0.05, 0.30 + 1.2 * (1 - u[k]) + 0.1 * rng.standard_normal())
        bike_rate = 0.25 + 0.45 * u[k]
        license_share = float(np.clip(0.5 + 0.38 * (1 - u[k]), 0.05, 0.98))
        transit_share = float(np.clip(0.12 + 0.55 * u[k], 0.02, 0.95))
        for _ in range(n_h):
            serial += 1
            size = 1 + int(rng.poisson(max(0.1, size_mean - 1)))
            n_children = int(sum(rng.uniform() < share_children for _ in range(size - 1)))
            n_adults = size - n_children
            if n_adults == 0:
                n_adults, n_children = 1, size - 1
            ages = sorted(
                [int(np.clip(rng.normal(adult_age_mean, 10), 19, 92)) for _ in range(n_adults)]
                + [int(rng.integers(0, 18)) for _ in range(n_children)],
                reverse=True,
            )
            over25 = sum(1 for a in ages if a > 25)
            households.append(
                HouseholdRecord(
                    household_id=f"H{serial:06d}",
                    neighborhood_id=nb_id,
                    income=float(max(600.0, rng.normal(income_mean, 500))),
                    size=size,
                    member_ages=tuple(ages),
                    uni_degrees_over25=int(rng.binomial(over25, uni_rate)) if over25 else 0,
                    cars=int(min(rng.poisson(car_rate), 5)),
                    bikes=int(min(rng.poisson(bike_rate * size), 12)),
                    driving_licenses_adults=int(rng.binomial(n_adults, license_share)),
                    transit_subscriptions=int(rng.binomial(size, transit_share)),
                    weight=float(rng.choice([0.8, 1.0, 1.0, 1.25])),
                )
            )
    return households


def _outcome_nuisance(confounders: np.ndarray) -> np.ndarray:
    """Smooth travel-intensity level from the control vector (no treatment)."""
    income = confounders[:, feats.CONFOUNDER_NAMES.index("income")]
    hh_size = confounders[:, feats.CONFOUNDER_NAMES.index("hh_size")]
    cars = confounders[:, feats.CONFOUNDER_NAMES.index("car_ownership")]
    transit = confounders[:, feats.CONFOUNDER_NAMES.index("transit_subscription")]
    return 1.2 + 1.1 * cars + 0.22 * hh_size + 0.00018 * income - 0.9 * transit


def _household_trips(rng, household: HouseholdRecord, target_kg: float, urbanity: float) -> list[TripRecord]:
    """Trips whose recomputed emissions equal ``target_kg`` exactly (fp-exact)."""
    grams = max(target_kg, 0.0) * 1000.0
    s_car = float(np.clip(0.45 + 0.40 * (1 - urbanity) + 0.05 * rng.standard_normal(), 0.25, 0.95))
    s_transit = (1.0 - s_car) * 0.7
    s_bike = (1.0 - s_car) * 0.3
    trips = []
    factors = DEFAULT_FACTORS_G_PER_PKM
    hh, person = household.household_id, "P1"
    if grams > 0:
        trips.append(TripRecord(hh, person, Mode.CAR, grams * s_car / factors[Mode.CAR], household.weight))
        trips.append(TripRecord(hh, person, Mode.TRANSIT, grams * s_transit / factors[Mode.TRANSIT], household.weight))
        trips.append(TripRecord(hh, person, Mode.BIKE, grams * s_bike / factors[Mode.BIKE], household.weight))
    trips.append(TripRecord(hh, person, Mode.FOOT, float(0.3 + 1.2 * urbanity), household.weight))
    return trips


def generate_city(spec: CitySpec, out_dir) -> CityTruth:
    """Write the full fixture-city input directory plus ``truth.csv``.

    The planted outcome is ``g(confounders) + theta(confounders) . T +
    noise`` where the confounders and treatments are exactly the values
    the feature pipeline recovers from the emitted files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = spawn_rng(spec.seed, "city")

    ids, centroids, u = _city_layout(spec, rng)
    neighborhoods, elections = _city_neighborhoods(spec, rng, ids, centroids, u)
    pois = _city_pois(rng, ids, centroids, u)
    stops, stop_departures = _city_gtfs(rng, ids, centroids, u)
    households = _city_households(spec, rng, ids, u)

    # emit everything except trips, then re-parse through the normal path
    ingest.write_neighborhoods_geojson(neighborhoods, out / "neighborhoods.geojson", include_green=False)
    ingest.write_elections_csv(elections, out / "elections.csv")
    ingest.write_pois_csv(pois, out / "pois.csv")
    gtfs_mod.write_gtfs(out / "gtfs", stops, stop_departures)
    ingest.write_households_csv(households, out / "households.csv")

    shares, _ = ingest.parse_elections(out / "elections.csv")
    nb_parsed = ingest.parse_neighborhoods(out / "neighborhoods.geojson", shares).raise_on_issues()
    poi_parsed = ingest.parse_pois(out / "pois.csv").raise_on_issues()
    gtfs_parsed = gtfs_mod.parse_gtfs(out / "gtfs")
    hh_parsed = ingest.parse_households(out / "households.csv").raise_on_issues()

    order = sorted(range(len(ids)), key=lambda k: ids[k])  # profile order is id-sorted
    nb_by_id = {nb.neighborhood_id: nb for nb in nb_parsed}
    factors = EmissionFactorTable()
    hh_by_nb: dict[str, list[HouseholdRecord]] = {}
    for h in hh_parsed:
        hh_by_nb.setdefault(h.neighborhood_id, []).append(h)

    confounders = np.vstack(
        [
            feats.aggregate_neighborhood(
                hh_by_nb[ids[k]], {}, factors, ids[k], green_share=nb_by_id[ids[k]].green_vote_share
            )[1].as_array()
            for k in order
        ]
    )
    built = feats.build_built_env(nb_parsed, poi_parsed, gtfs_parsed)
    raw_matrix = np.vstack([built[ids[k]].as_array() for k in order])
    treatments, _ = feats.standardize_and_align(raw_matrix)

    cars = confounders[:, feats.CONFOUNDER_NAMES.index("car_ownership")]
    car_z = (cars - cars.mean()) / cars.std()
    theta = (
        spec.theta_scale
        * CITY_BASE_THETA[None, :]
        * (1.0 + spec.moderation * car_z[:, None])
    )
    g = _outcome_nuisance(confounders)
    noise = spec.noise_y * rng.standard_normal(len(order))
    outcome = np.maximum(g + np.sum(theta * treatments, axis=1) + noise, 0.05)

    # household-level targets: centered multiplicative spread keeps the
    # weighted neighborhood mean exactly at the planted outcome
    trips: list[TripRecord] = []
    for pos, k in enumerate(order):
        members = hh_by_nb[ids[k]]
        w = np.array([h.weight for h in members])
        eta = rng.uniform(-0.45, 0.45, size=len(members))
        eta = eta - float(np.dot(w, eta) / w.sum())
        for h, e in zip(members, eta):
            target = outcome[pos] * (1.0 + e)
            trips.extend(_household_trips(rng, h, target, u[k]))
    ingest.write_trips_csv(trips, out / "trips.csv")

    # planned units: sites drawn mostly from less compact cells
    candidates = [k for k in range(len(ids))]
    weights = (1.0 - u) + 0.15
    weights = weights / weights.sum()
    sites = rng.choice(candidates, size=min(spec.planned_sites, len(ids)), replace=False, p=weights)
    split = rng.multinomial(spec.planned_total_units, np.full(len(sites), 1.0 / len(sites)))
    planned = [PlannedUnits(ids[int(k)], int(n)) for k, n in zip(sites, split) if n > 0]
    planned.sort(key=lambda p: p.neighborhood_id)
    ingest.write_planned_units_csv(planned, out / "planned_units.csv")

    truth = CityTruth(
        neighborhood_ids=[ids[k] for k in order],
        theta=theta,
        total_effect=np.sum(theta * treatments, axis=1),
        g=g,
        noise=outcome - g - np.sum(theta * treatments, axis=1),
        outcome=outcome,
    )
    write_truth_csv(truth, out / "truth.csv")
    return truth


def write_truth_csv(truth: CityTruth, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["neighborhood_id"]
            + [f"theta_{name}" for name in feats.FEATURE_NAMES]
            + ["total_effect", "g", "noise", "outcome_y"]
        )
        for i, nb in enumerate(truth.neighborhood_ids):
            writer.writerow(
                [nb]
                + [repr(float(v)) for v in truth.theta[i]]
                + [repr(float(truth.total_effect[i])), repr(float(truth.g[i])),
                   repr(float(truth.noise[i])), repr(float(truth.outcome[i]))]
            )


def load_truth(path) -> CityTruth:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    ids = [r["neighborhood_id"] for r in rows]
    theta = np.array([[float(r[f"theta_{n}"]) for n in feats.FEATURE_NAMES] for r in rows])
    return CityTruth(
        neighborhood_ids=ids,
        theta=theta,
        total_effect=np.array([float(r["total_effect"]) for r in rows]),
        g=np.array([float(r["g"]) for r in rows]),
        noise=np.array([float(r["noise"]) for r in rows]),
        outcome=np.array([float(r["outcome_y"]) for r in rows]),
    )
