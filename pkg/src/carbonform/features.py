"""Neighborhood-level feature construction.

Households are aggregated to one profile per neighborhood: the outcome
(kg CO2e per household-day), a 9-dimensional preference/composition
vector used as controls, and 8 raw built-form features which are then
z-standardized, direction-aligned, and differenced against the city
average to form the treatment.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .emissions import EmissionFactorTable, household_daily_emissions
from .errors import ConstantColumn, EmptyNeighborhood, ZeroBuiltUpArea
from .gtfs import GtfsBundle
from .ingest import (
    ADULT_AGE,
    DEGREE_AGE,
    DESTINATION_CATEGORIES,
    HouseholdRecord,
    NeighborhoodRaw,
    PoiRecord,
    TripRecord,
)

EARTH_RADIUS_KM = 6371.0088

CONFOUNDER_NAMES = (
    "income",
    "hh_size",
    "age",
    "uni_share",
    "car_ownership",
    "bike_ownership",
    "driving_license",
    "transit_subscription",
    "green_share",
)

FEATURE_NAMES = (
    "dist_center",
    "dist_subcenter",
    "poi_density",
    "pop_density",
    "mixed_use_share",
    "car_friendliness",
    "walkability",
    "transit_access",
)

#: Features whose raw direction points away from compact urban form; their
#: standardized values are sign-flipped so that larger always means more
#: compact/urban.
FLIPPED_FEATURES = ("dist_center", "dist_subcenter", "car_friendliness")

#: Compact-development dimension groups over FEATURE_NAMES.
FIVE_D_GROUPS: dict[str, tuple[str, ...]] = {
    "destination_accessibility": ("dist_center", "dist_subcenter", "poi_density"),
    "density": ("pop_density",),
    "diversity": ("mixed_use_share",),
    "design": ("car_friendliness", "walkability"),
    "distance_to_transit": ("transit_access",),
}


@dataclass(frozen=True)
class ConfounderVector:
    income: float
    hh_size: float
    age: float
    uni_share: float
    car_ownership: float
    bike_ownership: float
    driving_license: float
    transit_subscription: float
    green_share: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in CONFOUNDER_NAMES], dtype=np.float64)


@dataclass(frozen=True)
class BuiltEnvVector:
    dist_center: float
    dist_subcenter: float
    poi_density: float
    pop_density: float
    mixed_use_share: float
    car_friendliness: float
    walkability: float
    transit_access: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=np.float64)


@dataclass(frozen=True)
class NeighborhoodProfile:
    neighborhood_id: str
    outcome_y: float
    n_households_sampled: int
    confounders: ConfounderVector
    built_env_raw: BuiltEnvVector
    treatment: tuple[float, ...] | None = None
    low_support: bool = False


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def haversine_km(p: tuple[float, float], q: tuple[float, float]) -> float:
    """Great-circle distance between two (lat, lon) points in km."""
    lat1, lon1 = (math.radians(c) for c in p)
    lat2, lon2 = (math.radians(c) for c in q)
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(math.sqrt(a))


# ---------------------------------------------------------------------------
# household aggregation
# ---------------------------------------------------------------------------

def aggregate_neighborhood(
    households: Sequence[HouseholdRecord],
    trips_by_household: Mapping[str, Sequence[TripRecord]],
    factors: EmissionFactorTable,
    neighborhood_id: str,
    green_share: float,
    use_weights: bool = True,
) -> tuple[float, ConfounderVector]:
    """Outcome and control vector for one neighborhood.

    The outcome is the (survey-weighted) mean of household daily emissions.
    Adults-only statistics (mean age, degree share, license share) exclude
    children; ownership rates are ratios of weighted totals.
    """
    members = [h for h in households if h.neighborhood_id == neighborhood_id]
    if not members:
        raise EmptyNeighborhood(f"no households in neighborhood {neighborhood_id}")

    w = np.array([h.weight if use_weights else 1.0 for h in members], dtype=np.float64)
    w_sum = float(w.sum())

    emissions = np.array(
        [
            household_daily_emissions(trips_by_household.get(h.household_id, ()), factors)
            for h in members
        ],
        dtype=np.float64,
    )
    outcome = float(np.dot(w, emissions) / w_sum)

    income = float(np.dot(w, [h.income for h in members]) / w_sum)
    hh_size = float(np.dot(w, [h.size for h in members]) / w_sum)

    adult_age_sum = sum(
        wi * sum(a for a in h.member_ages if a > ADULT_AGE) for wi, h in zip(w, members)
    )
    adult_count = sum(wi * h.n_adults for wi, h in zip(w, members))
    if adult_count > 0:
        age = adult_age_sum / adult_count
    else:  # degenerate sample with no adults: fall back to all members
        age = sum(wi * sum(h.member_ages) for wi, h in zip(w, members)) / np.dot(
            w, [h.size for h in members]
        )

    over_degree = sum(wi * h.n_over_degree_age for wi, h in zip(w, members))
    degrees = sum(wi * h.uni_degrees_over25 for wi, h in zip(w, members))
    uni_share = degrees / over_degree if over_degree > 0 else 0.0

    persons = float(np.dot(w, [h.size for h in members]))
    car_ownership = float(np.dot(w, [h.cars for h in members]) / w_sum)
    bike_ownership = float(np.dot(w, [h.bikes for h in members]) / persons)
    licenses = float(np.dot(w, [h.driving_licenses_adults for h in members]))
    driving_license = licenses / adult_count if adult_count > 0 else 0.0
    transit_subscription = float(np.dot(w, [h.transit_subscriptions for h in members]) / persons)

    confounders = ConfounderVector(
        income=income,
        hh_size=hh_size,
        age=float(age),
        uni_share=float(uni_share),
        car_ownership=car_ownership,
        bike_ownership=bike_ownership,
        driving_license=float(driving_license),
        transit_subscription=transit_subscription,
        green_share=float(green_share),
    )
    return outcome, confounders


# ---------------------------------------------------------------------------
# centers and built-form features
# ---------------------------------------------------------------------------

def rank_centers(poi_density: Mapping[str, float], n_subcenters: int = 10) -> tuple[str, list[str]]:
    """Highest-density neighborhood plus top-``n_subcenters`` set.

    Ties break toward the lexically smaller neighborhood id; the center is
    always a member of the subcenter set.
    """
    if not poi_density:
        raise EmptyNeighborhood("no neighborhoods to rank")
    ranked = sorted(poi_density.items(), key=lambda kv: (-kv[1], kv[0]))
    center = ranked[0][0]
    subcenters = [nb for nb, _ in ranked[:n_subcenters]]
    return center, subcenters


@dataclass(frozen=True)
class GravityParams:
    decay_minutes: float = 10.0
    window_start_s: int = 7 * 3600
    window_end_s: int = 9 * 3600
    detour_factor: float = 1.3
    walk_speed_kmh: float = 4.5
    max_walk_minutes: float = 30.0


def walk_minutes(distance_km: float, params: GravityParams = GravityParams()) -> float:
    return distance_km * params.detour_factor / params.walk_speed_kmh * 60.0


def transit_accessibility(
    centroid: tuple[float, float], gtfs: GtfsBundle, params: GravityParams = GravityParams()
) -> float:
    """Gravity index: morning departure frequency discounted by walk time.

    ``sum_s f_s * exp(-t_walk(s) / decay)`` over stops within the walk-time
    cutoff, where ``f_s`` is departures per hour in the morning window.
    """
    window_hours = (params.window_end_s - params.window_start_s) / 3600.0
    counts: dict[str, int] = {}
    for dep in gtfs.departures:
        if params.window_start_s <= dep.seconds < params.window_end_s:
            counts[dep.stop_id] = counts.get(dep.stop_id, 0) + 1
    total = 0.0
    for stop in gtfs.stops:
        n = counts.get(stop.stop_id, 0)
        if n == 0:
            continue
        t_walk = walk_minutes(haversine_km(centroid, (stop.lat, stop.lon)), params)
        if t_walk > params.max_walk_minutes:
            continue
        freq_per_hour = n / window_hours
        total += freq_per_hour * math.exp(-t_walk / params.decay_minutes)
    return total


def assign_pois(
    pois: Sequence[PoiRecord], neighborhoods: Sequence[NeighborhoodRaw]
) -> dict[str, int]:
    """Destination-POI counts per neighborhood, by nearest centroid.

    Only the four destination categories count; ``other`` POIs are ignored.
    """
    counts = {nb.neighborhood_id: 0 for nb in neighborhoods}
    if not pois:
        return counts
    lat = np.array([nb.centroid[0] for nb in neighborhoods])
    lon = np.array([nb.centroid[1] for nb in neighborhoods])
    ids = [nb.neighborhood_id for nb in neighborhoods]
    coslat = np.cos(np.radians(lat.mean()))
    for poi in pois:
        if poi.category not in DESTINATION_CATEGORIES:
            continue
        d2 = (lat - poi.lat) ** 2 + ((lon - poi.lon) * coslat) ** 2
        counts[ids[int(np.argmin(d2))]] += 1
    return counts


def build_built_env(
    neighborhoods: Sequence[NeighborhoodRaw],
    pois: Sequence[PoiRecord],
    gtfs: GtfsBundle,
    gravity: GravityParams = GravityParams(),
) -> dict[str, BuiltEnvVector]:
    """All eight raw built-form features per neighborhood."""
    for nb in neighborhoods:
        if nb.built_up_area_km2 <= 0:
            raise ZeroBuiltUpArea(nb.neighborhood_id)

    poi_counts = assign_pois(pois, neighborhoods)
    poi_density = {
        nb.neighborhood_id: poi_counts[nb.neighborhood_id] / nb.built_up_area_km2
        for nb in neighborhoods
    }
    center_id, subcenter_ids = rank_centers(poi_density)
    centroid_of = {nb.neighborhood_id: nb.centroid for nb in neighborhoods}
    center = centroid_of[center_id]
    subcenters = [centroid_of[i] for i in subcenter_ids]

    out: dict[str, BuiltEnvVector] = {}
    for nb in neighborhoods:
        dist_center = haversine_km(nb.centroid, center)
        dist_subcenter = min(haversine_km(nb.centroid, s) for s in subcenters)
        car_friendliness = (
            nb.expressway_km / nb.population * 1000.0 if nb.population > 0 else 0.0
        )
        out[nb.neighborhood_id] = BuiltEnvVector(
            dist_center=dist_center,
            dist_subcenter=dist_subcenter,
            poi_density=poi_density[nb.neighborhood_id],
            pop_density=nb.population / nb.built_up_area_km2,
            mixed_use_share=nb.mixed_use_share,
            car_friendliness=car_friendliness,
            walkability=nb.intersections / nb.built_up_area_km2,
            transit_access=transit_accessibility(nb.centroid, gtfs, gravity),
        )
    return out


# ---------------------------------------------------------------------------
# treatment encoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TreatmentEncoder:
    """Z-standardization + direction alignment + city-average differencing.

    The city-average term is identically zero on the fitting set but is
    kept explicit so held-out neighborhoods transform consistently.
    """

    means: tuple[float, ...]
    sds: tuple[float, ...]
    signs: tuple[float, ...]
    city_average: tuple[float, ...]

    @classmethod
    def fit(cls, matrix: np.ndarray) -> "TreatmentEncoder":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != len(FEATURE_NAMES):
            raise ValueError(f"expected n x {len(FEATURE_NAMES)} matrix, got {matrix.shape}")
        if matrix.shape[0] < 2:
            raise ValueError("need at least 2 neighborhoods to standardize")
        means = matrix.mean(axis=0)
        sds = matrix.std(axis=0)  # population sd: units are the full city
        for j, (mean, sd) in enumerate(zip(means, sds)):
            if sd <= 1e-12 * max(1.0, abs(mean)):
                raise ConstantColumn(FEATURE_NAMES[j])
        signs = np.array(
            [-1.0 if name in FLIPPED_FEATURES else 1.0 for name in FEATURE_NAMES]
        )
        aligned = signs * (matrix - means) / sds
        city_average = aligned.mean(axis=0)
        return cls(tuple(means), tuple(sds), tuple(signs), tuple(city_average))

    def transform(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        z = (raw - np.array(self.means)) / np.array(self.sds)
        return np.array(self.signs) * z - np.array(self.city_average)


def standardize_and_align(matrix: np.ndarray) -> tuple[np.ndarray, TreatmentEncoder]:
    """Treatment rows for each neighborhood plus the fitted encoder."""
    encoder = TreatmentEncoder.fit(matrix)
    treatments = np.vstack([encoder.transform(row) for row in np.asarray(matrix, dtype=np.float64)])
    return treatments, encoder


# ---------------------------------------------------------------------------
# profile assembly and persistence
# ---------------------------------------------------------------------------

def build_profiles(
    neighborhoods: Sequence[NeighborhoodRaw],
    households: Sequence[HouseholdRecord],
    trips: Sequence[TripRecord],
    pois: Sequence[PoiRecord],
    gtfs: GtfsBundle,
    factors: EmissionFactorTable,
    gravity: GravityParams = GravityParams(),
    min_households: int = 10,
    use_weights: bool = True,
) -> tuple[list[NeighborhoodProfile], TreatmentEncoder]:
    """Full per-neighborhood profiles with treatments encoded.

    Neighborhoods without surveyed households are dropped; neighborhoods
    with fewer than ``min_households`` are kept but flagged low-support.
    """
    trips_by_household: dict[str, list[TripRecord]] = {}
    for t in trips:
        trips_by_household.setdefault(t.household_id, []).append(t)
    households_by_nb: dict[str, list[HouseholdRecord]] = {}
    for h in households:
        households_by_nb.setdefault(h.neighborhood_id, []).append(h)

    built_env = build_built_env(neighborhoods, pois, gtfs, gravity)

    surveyed = [nb for nb in neighborhoods if households_by_nb.get(nb.neighborhood_id)]
    profiles: list[NeighborhoodProfile] = []
    for nb in surveyed:
        members = households_by_nb[nb.neighborhood_id]
        outcome, confounders = aggregate_neighborhood(
            members,
            trips_by_household,
            factors,
            nb.neighborhood_id,
            green_share=nb.green_vote_share,
            use_weights=use_weights,
        )
        profiles.append(
            NeighborhoodProfile(
                neighborhood_id=nb.neighborhood_id,
                outcome_y=outcome,
                n_households_sampled=len(members),
                confounders=confounders,
                built_env_raw=built_env[nb.neighborhood_id],
                low_support=len(members) < min_households,
            )
        )
    profiles.sort(key=lambda p: p.neighborhood_id)

    raw_matrix = np.vstack([p.built_env_raw.as_array() for p in profiles])
    treatments, encoder = standardize_and_align(raw_matrix)
    profiles = [
        replace(p, treatment=tuple(float(v) for v in t)) for p, t in zip(profiles, treatments)
    ]
    return profiles, encoder


def profiles_to_arrays(profiles: Sequence[NeighborhoodProfile]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(X confounders, y outcomes, T treatments) as float64 arrays."""
    X = np.vstack([p.confounders.as_array() for p in profiles])
    y = np.array([p.outcome_y for p in profiles], dtype=np.float64)
    if any(p.treatment is None for p in profiles):
        raise ValueError("profiles missing treatment encoding")
    T = np.vstack([np.array(p.treatment, dtype=np.float64) for p in profiles])
    return X, y, T


def write_features_csv(profiles: Sequence[NeighborhoodProfile], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = (
            ["neighborhood_id", "outcome_y", "n_households"]
            + [f"raw_{n}" for n in FEATURE_NAMES]
            + [f"t_{n}" for n in FEATURE_NAMES]
            + list(CONFOUNDER_NAMES)
        )
        writer.writerow(header)
        for p in profiles:
            writer.writerow(
                [p.neighborhood_id, repr(float(p.outcome_y)), p.n_households_sampled]
                + [repr(float(v)) for v in p.built_env_raw.as_array().tolist()]
                + [repr(float(v)) for v in (p.treatment or ())]
                + [repr(float(v)) for v in p.confounders.as_array().tolist()]
            )


def profiles_to_json(
    profiles: Sequence[NeighborhoodProfile], encoder: TreatmentEncoder
) -> dict:
    return {
        "schema_version": "profiles/1",
        "encoder": {
            "means": list(encoder.means),
            "sds": list(encoder.sds),
            "signs": list(encoder.signs),
            "city_average": list(encoder.city_average),
        },
        "profiles": [
            {
                "neighborhood_id": p.neighborhood_id,
                "outcome_y": p.outcome_y,
                "n_households_sampled": p.n_households_sampled,
                "confounders": {n: getattr(p.confounders, n) for n in CONFOUNDER_NAMES},
                "built_env_raw": {n: getattr(p.built_env_raw, n) for n in FEATURE_NAMES},
                "treatment": list(p.treatment) if p.treatment is not None else None,
                "low_support": p.low_support,
            }
            for p in profiles
        ],
    }


def profiles_from_json(doc: dict) -> tuple[list[NeighborhoodProfile], TreatmentEncoder]:
    enc = doc["encoder"]
    encoder = TreatmentEncoder(
        tuple(enc["means"]), tuple(enc["sds"]), tuple(enc["signs"]), tuple(enc["city_average"])
    )
    profiles = [
        NeighborhoodProfile(
            neighborhood_id=item["neighborhood_id"],
            outcome_y=item["outcome_y"],
            n_households_sampled=item["n_households_sampled"],
            confounders=ConfounderVector(**item["confounders"]),
            built_env_raw=BuiltEnvVector(**item["built_env_raw"]),
            treatment=tuple(item["treatment"]) if item["treatment"] is not None else None,
            low_support=item["low_support"],
        )
        for item in doc["profiles"]
    ]
    return profiles, encoder


def save_profiles(profiles, encoder, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(profiles_to_json(profiles, encoder), fh)


def load_profiles(path) -> tuple[list[NeighborhoodProfile], TreatmentEncoder]:
    with Path(path).open(encoding="utf-8") as fh:
        return profiles_from_json(json.load(fh))
