"""Parsers for all raw input files.

Every parser is total: each data row either becomes a validated record or
an entry in the returned issue list, so ``len(records) + len(issues)``
always equals the number of data rows. Writers for the same formats live
here too, so that parsed data round-trips exactly.

Expected files (all CSVs UTF-8, comma separated, header mandatory):

* ``trips.csv``            household_id,person_id,mode,distance_km[,weight]
* ``households.csv``       household_id,neighborhood_id,income,size,member_ages,
                           uni_degrees_over25,cars,bikes,driving_licenses_adults,
                           transit_subscriptions[,weight]  (ages pipe-separated)
* ``neighborhoods.geojson``FeatureCollection; polygon or point features with
                           properties described in :class:`NeighborhoodRaw`
* ``pois.csv``             lat,lon,category
* ``planned_units.csv``    neighborhood_id,units
* ``elections.csv``        neighborhood_id,green_share
"""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import MissingFile, ParseIssue


class Mode(str, enum.Enum):
    CAR = "car"
    MOPED = "moped"
    TRANSIT = "transit"
    BIKE = "bike"
    FOOT = "foot"


class PoiCategory(str, enum.Enum):
    OFFICE = "office"
    SCHOOL = "school"
    KINDERGARTEN = "kindergarten"
    UNIVERSITY = "university"
    OTHER = "other"


#: POI categories that count toward the local destination-density index.
DESTINATION_CATEGORIES = (
    PoiCategory.OFFICE,
    PoiCategory.SCHOOL,
    PoiCategory.KINDERGARTEN,
    PoiCategory.UNIVERSITY,
)

ADULT_AGE = 18  # strictly-greater threshold for adult-only statistics
DEGREE_AGE = 25  # strictly-greater threshold for the university-share base


@dataclass(frozen=True)
class TripRecord:
    household_id: str
    person_id: str
    mode: Mode
    distance_km: float
    weight: float = 1.0


@dataclass(frozen=True)
class HouseholdRecord:
    household_id: str
    neighborhood_id: str
    income: float
    size: int
    member_ages: tuple[int, ...]
    uni_degrees_over25: int
    cars: int
    bikes: int
    driving_licenses_adults: int
    transit_subscriptions: int
    weight: float = 1.0

    @property
    def n_adults(self) -> int:
        return sum(1 for a in self.member_ages if a > ADULT_AGE)

    @property
    def n_over_degree_age(self) -> int:
        return sum(1 for a in self.member_ages if a > DEGREE_AGE)


@dataclass(frozen=True)
class NeighborhoodRaw:
    neighborhood_id: str
    centroid: tuple[float, float]  # (lat, lon)
    population: int
    built_up_area_km2: float
    mixed_use_share: float
    expressway_km: float
    intersections: int
    green_vote_share: float
    rail_station_centroids: tuple[tuple[float, float], ...] = ()
    inside_or_on_ringbahn: bool = False
    boundary: tuple[tuple[float, float], ...] | None = None  # (lat, lon) ring, for map export only


@dataclass(frozen=True)
class PoiRecord:
    lat: float
    lon: float
    category: PoiCategory


@dataclass(frozen=True)
class PlannedUnits:
    neighborhood_id: str
    units: int


@dataclass
class ParseResult:
    records: list
    issues: list[ParseIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def raise_on_issues(self) -> list:
        if self.issues:
            head = "; ".join(str(i) for i in self.issues[:5])
            raise ValueError(f"{len(self.issues)} invalid row(s): {head}")
        return self.records


def _open_csv(path) -> tuple[list[dict], list[str]]:
    p = Path(path)
    if not p.exists():
        raise MissingFile(str(p))
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fieldnames = [f.strip() for f in (reader.fieldnames or [])]
        rows = list(reader)
    return rows, fieldnames


def _fnum(raw: str, name: str) -> float:
    value = float(raw)
    if math.isnan(value) or math.isinf(value):
        raise ValueError(f"{name} is not finite")
    return value


def _fint(raw: str, name: str) -> int:
    value = int(raw)
    return value


# ---------------------------------------------------------------------------
# trips
# ---------------------------------------------------------------------------

def parse_trips(path) -> ParseResult:
    """Parse ``trips.csv``; unknown modes and negative distances become issues."""
    rows, _ = _open_csv(path)
    source = Path(path).name
    records: list[TripRecord] = []
    issues: list[ParseIssue] = []
    for i, row in enumerate(rows, start=1):
        try:
            hh = (row["household_id"] or "").strip()
            person = (row["person_id"] or "").strip()
            mode_raw = (row["mode"] or "").strip().lower()
            dist = _fnum(row["distance_km"], "distance_km")
            weight = _fnum(row["weight"], "weight") if row.get("weight") not in (None, "") else 1.0
        except (KeyError, TypeError, ValueError) as exc:
            issues.append(ParseIssue("malformed_row", source, i, str(exc)))
            continue
        if not hh:
            issues.append(ParseIssue("malformed_row", source, i, "empty household_id"))
            continue
        try:
            mode = Mode(mode_raw)
        except ValueError:
            issues.append(ParseIssue("unknown_mode", source, i, f"unknown mode '{mode_raw}'"))
            continue
        if dist < 0:
            issues.append(ParseIssue("negative_distance", source, i, f"distance_km={dist}"))
            continue
        if weight <= 0:
            issues.append(ParseIssue("malformed_row", source, i, f"non-positive weight {weight}"))
            continue
        records.append(TripRecord(hh, person, mode, dist, weight))
    return ParseResult(records, issues)


def write_trips_csv(trips: Iterable[TripRecord], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["household_id", "person_id", "mode", "distance_km", "weight"])
        for t in trips:
            writer.writerow([t.household_id, t.person_id, t.mode.value, repr(float(t.distance_km)), repr(float(t.weight))])


# ---------------------------------------------------------------------------
# households
# ---------------------------------------------------------------------------

def parse_households(path) -> ParseResult:
    rows, _ = _open_csv(path)
    source = Path(path).name
    records: list[HouseholdRecord] = []
    issues: list[ParseIssue] = []
    for i, row in enumerate(rows, start=1):
        try:
            hh = (row["household_id"] or "").strip()
            nb = (row["neighborhood_id"] or "").strip()
            income = _fnum(row["income"], "income")
            size = _fint(row["size"], "size")
            ages_raw = (row["member_ages"] or "").strip()
            ages = tuple(int(a) for a in ages_raw.split("|")) if ages_raw else ()
            uni = _fint(row["uni_degrees_over25"], "uni_degrees_over25")
            cars = _fint(row["cars"], "cars")
            bikes = _fint(row["bikes"], "bikes")
            licenses = _fint(row["driving_licenses_adults"], "driving_licenses_adults")
            subs = _fint(row["transit_subscriptions"], "transit_subscriptions")
            weight = _fnum(row["weight"], "weight") if row.get("weight") not in (None, "") else 1.0
        except (KeyError, TypeError, ValueError) as exc:
            issues.append(ParseIssue("malformed_row", source, i, str(exc)))
            continue
        problem = _household_problem(hh, nb, size, ages, uni, cars, bikes, licenses, subs, weight)
        if problem:
            issues.append(ParseIssue("invalid_household", source, i, problem))
            continue
        records.append(HouseholdRecord(hh, nb, income, size, ages, uni, cars, bikes, licenses, subs, weight))
    return ParseResult(records, issues)


def _household_problem(hh, nb, size, ages, uni, cars, bikes, licenses, subs, weight) -> str | None:
    if not hh or not nb:
        return "empty id"
    if size < 1:
        return f"size={size} < 1"
    if len(ages) != size:
        return f"{len(ages)} ages for size {size}"
    if any(a < 0 for a in ages):
        return "negative member age"
    if min(uni, cars, bikes, licenses, subs) < 0:
        return "negative count"
    adults = sum(1 for a in ages if a > ADULT_AGE)
    if licenses > adults:
        return f"driving_licenses_adults={licenses} > {adults} adults"
    if subs > size:
        return f"transit_subscriptions={subs} > size {size}"
    if uni > sum(1 for a in ages if a > DEGREE_AGE):
        return f"uni_degrees_over25={uni} exceeds members over {DEGREE_AGE}"
    if weight <= 0:
        return f"non-positive weight {weight}"
    return None


def write_households_csv(households: Iterable[HouseholdRecord], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "household_id", "neighborhood_id", "income", "size", "member_ages",
            "uni_degrees_over25", "cars", "bikes", "driving_licenses_adults",
            "transit_subscriptions", "weight",
        ])
        for h in households:
            writer.writerow([
                h.household_id, h.neighborhood_id, repr(float(h.income)), h.size,
                "|".join(str(a) for a in h.member_ages), h.uni_degrees_over25,
                h.cars, h.bikes, h.driving_licenses_adults, h.transit_subscriptions,
                repr(float(h.weight)),
            ])


# ---------------------------------------------------------------------------
# neighborhoods (GeoJSON)
# ---------------------------------------------------------------------------

_NB_NUMERIC = {
    "population": int,
    "built_up_area_km2": float,
    "mixed_use_share": float,
    "expressway_km": float,
    "intersections": int,
}


def parse_neighborhoods(path, elections: dict[str, float] | None = None) -> ParseResult:
    """Parse ``neighborhoods.geojson``.

    ``green_vote_share`` may come from feature properties or, when absent,
    from the ``elections`` mapping (see :func:`parse_elections`). Polygon
    geometry is reduced to centroid plus the retained boundary ring; all
    downstream distances use centroids only.
    """
    p = Path(path)
    if not p.exists():
        raise MissingFile(str(p))
    with p.open(encoding="utf-8") as fh:
        doc = json.load(fh)
    source = p.name
    features = doc.get("features", []) if isinstance(doc, dict) else []
    records: list[NeighborhoodRaw] = []
    issues: list[ParseIssue] = []
    for i, feature in enumerate(features, start=1):
        try:
            record = _feature_to_neighborhood(feature, elections or {})
        except ValueError as exc:
            kind = "malformed_geometry" if "geometry" in str(exc) else "invalid_neighborhood"
            issues.append(ParseIssue(kind, source, i, str(exc)))
            continue
        records.append(record)
    return ParseResult(records, issues)


def _feature_to_neighborhood(feature: dict, elections: dict[str, float]) -> NeighborhoodRaw:
    props = feature.get("properties") or {}
    nb_id = str(props.get("neighborhood_id", "")).strip()
    if not nb_id:
        raise ValueError("missing neighborhood_id property")
    centroid, boundary = _reduce_geometry(feature.get("geometry"))
    values = {}
    for name, cast in _NB_NUMERIC.items():
        if name not in props:
            raise ValueError(f"missing property {name}")
        values[name] = cast(props[name])
    if nb_id in elections:
        green = float(elections[nb_id])
    elif "green_vote_share" in props:
        green = float(props["green_vote_share"])
    else:
        raise ValueError("green_vote_share missing from properties and election data")
    stations = tuple(
        (float(lat), float(lon)) for lat, lon in (props.get("rail_stations") or [])
    )
    record = NeighborhoodRaw(
        neighborhood_id=nb_id,
        centroid=centroid,
        population=values["population"],
        built_up_area_km2=values["built_up_area_km2"],
        mixed_use_share=values["mixed_use_share"],
        expressway_km=values["expressway_km"],
        intersections=values["intersections"],
        green_vote_share=green,
        rail_station_centroids=stations,
        inside_or_on_ringbahn=bool(props.get("inside_or_on_ringbahn", False)),
        boundary=boundary,
    )
    _validate_neighborhood(record)
    return record


def _validate_neighborhood(r: NeighborhoodRaw) -> None:
    if r.built_up_area_km2 <= 0:
        raise ValueError(f"built_up_area_km2={r.built_up_area_km2} must be > 0")
    for name, share in (("mixed_use_share", r.mixed_use_share), ("green_vote_share", r.green_vote_share)):
        if not 0.0 <= share <= 1.0:
            raise ValueError(f"{name}={share} outside [0,1]")
    if r.population < 0 or r.expressway_km < 0 or r.intersections < 0:
        raise ValueError("negative population/expressway/intersections")
    if not (-90 <= r.centroid[0] <= 90 and -180 <= r.centroid[1] <= 180):
        raise ValueError("centroid outside valid coordinate range")


def _reduce_geometry(geometry) -> tuple[tuple[float, float], tuple[tuple[float, float], ...] | None]:
    """Centroid (lat, lon) plus outer ring for Polygon/Point geometry."""
    if not geometry or "type" not in geometry:
        raise ValueError("missing geometry")
    gtype = geometry["type"]
    coords = geometry.get("coordinates")
    if gtype == "Point":
        lon, lat = float(coords[0]), float(coords[1])
        return (lat, lon), None
    if gtype == "Polygon":
        rings = coords
    elif gtype == "MultiPolygon":
        if not coords:
            raise ValueError("empty MultiPolygon geometry")
        rings = max(coords, key=lambda poly: abs(_ring_area(poly[0])))
    else:
        raise ValueError(f"unsupported geometry type {gtype}")
    if not rings or len(rings[0]) < 4:
        raise ValueError("polygon geometry ring needs >= 4 points")
    outer = rings[0]
    if outer[0] != outer[-1]:
        raise ValueError("polygon geometry ring not closed")
    lat, lon = _ring_centroid(outer)
    boundary = tuple((float(pt[1]), float(pt[0])) for pt in outer)
    return (lat, lon), boundary


def _ring_area(ring: Sequence[Sequence[float]]) -> float:
    area = 0.0
    for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
        area += x1 * y2 - x2 * y1
    return area / 2.0


def _ring_centroid(ring: Sequence[Sequence[float]]) -> tuple[float, float]:
    area = _ring_area(ring)
    if abs(area) < 1e-12:  # degenerate ring: fall back to vertex mean
        lats = [pt[1] for pt in ring[:-1]]
        lons = [pt[0] for pt in ring[:-1]]
        return sum(lats) / len(lats), sum(lons) / len(lons)
    cx = cy = 0.0
    for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
        cross = x1 * y2 - x2 * y1
        cx += (x1 + x2) * cross
        cy += (y1 + y2) * cross
    cx /= 6.0 * area
    cy /= 6.0 * area
    return cy, cx


def write_neighborhoods_geojson(records: Iterable[NeighborhoodRaw], path, include_green: bool = True) -> None:
    features = []
    for r in records:
        props = {
            "neighborhood_id": r.neighborhood_id,
            "population": r.population,
            "built_up_area_km2": r.built_up_area_km2,
            "mixed_use_share": r.mixed_use_share,
            "expressway_km": r.expressway_km,
            "intersections": r.intersections,
            "rail_stations": [[lat, lon] for lat, lon in r.rail_station_centroids],
            "inside_or_on_ringbahn": r.inside_or_on_ringbahn,
        }
        if include_green:
            props["green_vote_share"] = r.green_vote_share
        if r.boundary is not None:
            geometry = {
                "type": "Polygon",
                "coordinates": [[[lon, lat] for lat, lon in r.boundary]],
            }
        else:
            geometry = {"type": "Point", "coordinates": [r.centroid[1], r.centroid[0]]}
        features.append({"type": "Feature", "geometry": geometry, "properties": props})
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh)


# ---------------------------------------------------------------------------
# POIs, planned units, elections
# ---------------------------------------------------------------------------

def parse_pois(path, bounding_box: tuple[float, float, float, float] | None = None) -> ParseResult:
    """Parse ``pois.csv``; ``bounding_box`` is (min_lat, min_lon, max_lat, max_lon)."""
    rows, _ = _open_csv(path)
    source = Path(path).name
    records: list[PoiRecord] = []
    issues: list[ParseIssue] = []
    for i, row in enumerate(rows, start=1):
        try:
            lat = _fnum(row["lat"], "lat")
            lon = _fnum(row["lon"], "lon")
            category = PoiCategory((row["category"] or "").strip().lower())
        except (KeyError, TypeError, ValueError) as exc:
            issues.append(ParseIssue("malformed_row", source, i, str(exc)))
            continue
        if bounding_box is not None:
            min_lat, min_lon, max_lat, max_lon = bounding_box
            if not (min_lat <= lat <= max_lat and min_lon <= lon <= max_lon):
                issues.append(ParseIssue("out_of_bounds", source, i, f"({lat}, {lon}) outside study area"))
                continue
        records.append(PoiRecord(lat, lon, category))
    return ParseResult(records, issues)


def write_pois_csv(pois: Iterable[PoiRecord], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lat", "lon", "category"])
        for poi in pois:
            writer.writerow([repr(float(poi.lat)), repr(float(poi.lon)), poi.category.value])


def parse_planned_units(path) -> ParseResult:
    rows, _ = _open_csv(path)
    source = Path(path).name
    records: list[PlannedUnits] = []
    issues: list[ParseIssue] = []
    for i, row in enumerate(rows, start=1):
        try:
            nb = (row["neighborhood_id"] or "").strip()
            units = _fint(row["units"], "units")
        except (KeyError, TypeError, ValueError) as exc:
            issues.append(ParseIssue("malformed_row", source, i, str(exc)))
            continue
        if not nb or units < 0:
            issues.append(ParseIssue("malformed_row", source, i, f"id='{nb}' units={units}"))
            continue
        records.append(PlannedUnits(nb, units))
    return ParseResult(records, issues)


def write_planned_units_csv(records: Iterable[PlannedUnits], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["neighborhood_id", "units"])
        for r in records:
            writer.writerow([r.neighborhood_id, r.units])


def parse_elections(path) -> tuple[dict[str, float], list[ParseIssue]]:
    """``elections.csv`` → mapping neighborhood_id → green vote share."""
    rows, _ = _open_csv(path)
    source = Path(path).name
    shares: dict[str, float] = {}
    issues: list[ParseIssue] = []
    for i, row in enumerate(rows, start=1):
        try:
            nb = (row["neighborhood_id"] or "").strip()
            share = _fnum(row["green_share"], "green_share")
        except (KeyError, TypeError, ValueError) as exc:
            issues.append(ParseIssue("malformed_row", source, i, str(exc)))
            continue
        if not nb or not 0.0 <= share <= 1.0:
            issues.append(ParseIssue("malformed_row", source, i, f"id='{nb}' green_share={share}"))
            continue
        shares[nb] = share
    return shares, issues


def write_elections_csv(shares: dict[str, float], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["neighborhood_id", "green_share"])
        for nb in sorted(shares):
            writer.writerow([nb, repr(float(shares[nb]))])


def with_green_share(record: NeighborhoodRaw, share: float) -> NeighborhoodRaw:
    return replace(record, green_vote_share=share)
