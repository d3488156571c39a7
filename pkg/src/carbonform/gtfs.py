"""GTFS feed parsing: stops joined with per-stop departure events.

Only the four standard text files needed for a frequency-based
accessibility index are read: ``stops.txt``, ``stop_times.txt``,
``trips.txt``, ``calendar.txt``. Departure times keep the GTFS
over-midnight convention (values up to but excluding 48:00:00).
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MissingFile, ParseIssue

WEEKDAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")

_TIME_RE = re.compile(r"^(\d{1,2}):([0-5]\d):([0-5]\d)$")

MAX_DEPARTURE_SECONDS = 172800  # 48h clock


@dataclass(frozen=True)
class Stop:
    stop_id: str
    lat: float
    lon: float


@dataclass(frozen=True)
class Departure:
    stop_id: str
    seconds: int  # since service-day midnight
    service_days: tuple[bool, ...]  # monday..sunday


@dataclass
class GtfsBundle:
    stops: list[Stop]
    departures: list[Departure]
    service_day: str = "tuesday"
    issues: list[ParseIssue] = field(default_factory=list)

    def stops_by_id(self) -> dict[str, Stop]:
        return {s.stop_id: s for s in self.stops}


def parse_time_to_seconds(raw: str) -> int:
    """``HH:MM:SS`` → seconds since midnight; hours may exceed 23."""
    m = _TIME_RE.match(raw.strip())
    if not m:
        raise ValueError(f"bad time format '{raw}'")
    hours, minutes, seconds = (int(g) for g in m.groups())
    total = hours * 3600 + minutes * 60 + seconds
    if not 0 <= total < MAX_DEPARTURE_SECONDS:
        raise ValueError(f"time '{raw}' outside [0, 48:00:00)")
    return total


def _read_gtfs_file(directory: Path, name: str) -> list[dict]:
    path = directory / name
    if not path.exists():
        raise MissingFile(str(path))
    with path.open(newline="", encoding="utf-8-sig") as fh:
        return list(csv.DictReader(fh))


def parse_gtfs(directory, service_day: str = "tuesday") -> GtfsBundle:
    """Parse a GTFS directory into stops plus departures active on ``service_day``.

    Rows with dangling references or malformed times are collected as
    issues and excluded; every returned departure references a known,
    geolocated stop.
    """
    if service_day not in WEEKDAYS:
        raise ValueError(f"service_day must be one of {WEEKDAYS}")
    directory = Path(directory)
    issues: list[ParseIssue] = []

    stops: list[Stop] = []
    stop_ids: set[str] = set()
    for i, row in enumerate(_read_gtfs_file(directory, "stops.txt"), start=1):
        try:
            stop = Stop((row["stop_id"] or "").strip(), float(row["stop_lat"]), float(row["stop_lon"]))
        except (KeyError, TypeError, ValueError) as exc:
            issues.append(ParseIssue("malformed_row", "stops.txt", i, str(exc)))
            continue
        if not stop.stop_id:
            issues.append(ParseIssue("malformed_row", "stops.txt", i, "empty stop_id"))
            continue
        stops.append(stop)
        stop_ids.add(stop.stop_id)

    service_mask: dict[str, tuple[bool, ...]] = {}
    for i, row in enumerate(_read_gtfs_file(directory, "calendar.txt"), start=1):
        try:
            service_id = (row["service_id"] or "").strip()
            mask = tuple(row[day].strip() == "1" for day in WEEKDAYS)
        except (KeyError, TypeError, AttributeError) as exc:
            issues.append(ParseIssue("malformed_row", "calendar.txt", i, str(exc)))
            continue
        service_mask[service_id] = mask

    trip_service: dict[str, str] = {}
    for i, row in enumerate(_read_gtfs_file(directory, "trips.txt"), start=1):
        try:
            trip_id = (row["trip_id"] or "").strip()
            service_id = (row["service_id"] or "").strip()
        except (KeyError, TypeError, AttributeError) as exc:
            issues.append(ParseIssue("malformed_row", "trips.txt", i, str(exc)))
            continue
        if service_id not in service_mask:
            issues.append(ParseIssue("dangling_reference", "trips.txt", i, f"unknown service_id '{service_id}'"))
            continue
        trip_service[trip_id] = service_id

    day_index = WEEKDAYS.index(service_day)
    departures: list[Departure] = []
    for i, row in enumerate(_read_gtfs_file(directory, "stop_times.txt"), start=1):
        trip_id = (row.get("trip_id") or "").strip()
        stop_id = (row.get("stop_id") or "").strip()
        if trip_id not in trip_service:
            issues.append(ParseIssue("dangling_reference", "stop_times.txt", i, f"unknown trip_id '{trip_id}'"))
            continue
        if stop_id not in stop_ids:
            issues.append(ParseIssue("dangling_reference", "stop_times.txt", i, f"unknown stop_id '{stop_id}'"))
            continue
        try:
            seconds = parse_time_to_seconds(row.get("departure_time") or "")
        except ValueError as exc:
            issues.append(ParseIssue("bad_time_format", "stop_times.txt", i, str(exc)))
            continue
        mask = service_mask[trip_service[trip_id]]
        if mask[day_index]:
            departures.append(Departure(stop_id, seconds, mask))

    return GtfsBundle(stops=stops, departures=departures, service_day=service_day, issues=issues)


def seconds_to_time(seconds: int) -> str:
    h, rem = divmod(int(seconds), 3600)
    m, s = divmod(rem, 60)
    return f"{h:02d}:{m:02d}:{s:02d}"


def write_gtfs(directory, stops: list[Stop], stop_departures: list[tuple[str, int]],
               weekday_mask: tuple[bool, ...] = (True,) * 5 + (False, False)) -> None:
    """Write a minimal single-service GTFS feed (one trip per departure event)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "stops.txt").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stop_id", "stop_name", "stop_lat", "stop_lon"])
        for s in stops:
            writer.writerow([s.stop_id, f"Stop {s.stop_id}", repr(float(s.lat)), repr(float(s.lon))])
    with (directory / "calendar.txt").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["service_id", *WEEKDAYS, "start_date", "end_date"])
        writer.writerow(["S1", *("1" if on else "0" for on in weekday_mask), "20240101", "20261231"])
    with (directory / "trips.txt").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["route_id", "service_id", "trip_id"])
        for k in range(len(stop_departures)):
            writer.writerow(["R1", "S1", f"T{k}"])
    with (directory / "stop_times.txt").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence"])
        for k, (stop_id, seconds) in enumerate(stop_departures):
            hhmmss = seconds_to_time(seconds)
            writer.writerow([f"T{k}", hhmmss, hhmmss, stop_id, 1])
