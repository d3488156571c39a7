"""Housing-allocation scenarios and their induced travel emissions.

New residents are assumed to adopt the city-average behavior plus the
neighborhood's estimated built-form effect; the built environment itself
is treated as unchanged by the development.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .causal_dml import EffectEstimate
from .errors import EmptyTargetSet, TooFewNeighborhoods, UnknownNeighborhood
from .features import GravityParams, NeighborhoodProfile, haversine_km, walk_minutes
from .ingest import NeighborhoodRaw, PlannedUnits

#: Walk-time threshold for the rail-oriented densification preset.
TOD_MAX_WALK_MINUTES = 7.0

#: Number of neighborhoods the greedy optimal allocation targets.
OPTIMUM_TARGET_COUNT = 20


@dataclass(frozen=True)
class Scenario:
    name: str
    allocations: dict[str, int]  # neighborhood_id -> units

    def __post_init__(self):
        if any(u < 0 for u in self.allocations.values()):
            raise ValueError("allocations must be non-negative")
        if self.total_units <= 0:
            raise ValueError(f"scenario '{self.name}' allocates no units")

    @property
    def total_units(self) -> int:
        return sum(self.allocations.values())


@dataclass(frozen=True)
class ScenarioContribution:
    neighborhood_id: str
    units: int
    expected_emissions: float  # kg CO2e per household-day for new residents here


@dataclass(frozen=True)
class ScenarioResult:
    name: str
    total_units: int
    induced_mean_emissions: float  # kg CO2e per household-day
    relative_to_average: float  # (induced - city mean) / city mean
    contributions: tuple[ScenarioContribution, ...]


def evaluate_scenario(
    scenario: Scenario, effects: Mapping[str, EffectEstimate], city_mean_outcome: float
) -> ScenarioResult:
    """Units-weighted expected emissions of a scenario's new residents."""
    unknown = [nb for nb in scenario.allocations if nb not in effects]
    if unknown:
        raise UnknownNeighborhood(unknown)
    contributions = []
    weighted = 0.0
    total = scenario.total_units
    for nb in sorted(scenario.allocations):
        units = scenario.allocations[nb]
        expected = city_mean_outcome + effects[nb].total_effect
        weighted += units * expected
        contributions.append(ScenarioContribution(nb, units, expected))
    induced = weighted / total
    return ScenarioResult(
        name=scenario.name,
        total_units=total,
        induced_mean_emissions=induced,
        relative_to_average=(induced - city_mean_outcome) / city_mean_outcome,
        contributions=tuple(contributions),
    )


def even_split(
    name: str, targets: Sequence[str], units: int, effects: Mapping[str, EffectEstimate]
) -> Scenario:
    """Distribute ``units`` evenly; remainder units go to lowest-effect targets first."""
    if not targets:
        raise EmptyTargetSet(name)
    base, remainder = divmod(units, len(targets))
    by_effect = sorted(targets, key=lambda nb: (effects[nb].total_effect, nb))
    allocations = {nb: base for nb in targets}
    for nb in by_effect[:remainder]:
        allocations[nb] += 1
    return Scenario(name=name, allocations=allocations)


def optimize_allocation(
    effects: Mapping[str, EffectEstimate], units: int, k: int = OPTIMUM_TARGET_COUNT
) -> Scenario:
    """Even split over the k neighborhoods with the lowest estimated effect.

    For even splits this greedy choice is exactly optimal over all
    k-subsets.
    """
    if len(effects) < k:
        raise TooFewNeighborhoods(f"need at least {k} neighborhoods, have {len(effects)}")
    ranked = sorted(effects.values(), key=lambda e: (e.total_effect, e.neighborhood_id))
    targets = [e.neighborhood_id for e in ranked[:k]]
    return even_split("Optimum", targets, units, effects)


def rail_walk_minutes(
    neighborhoods: Sequence[NeighborhoodRaw], gravity: GravityParams = GravityParams()
) -> dict[str, float]:
    """Walk time from each centroid to the nearest rail station (inf if none)."""
    stations = [pt for nb in neighborhoods for pt in nb.rail_station_centroids]
    out = {}
    for nb in neighborhoods:
        if stations:
            nearest = min(haversine_km(nb.centroid, s) for s in stations)
            out[nb.neighborhood_id] = walk_minutes(nearest, gravity)
        else:
            out[nb.neighborhood_id] = float("inf")
    return out


def preset_scenarios(
    neighborhoods: Sequence[NeighborhoodRaw],
    profiles: Sequence[NeighborhoodProfile],
    effects: Mapping[str, EffectEstimate],
    planned: Sequence[PlannedUnits],
    gravity: GravityParams = GravityParams(),
    optimum_k: int = OPTIMUM_TARGET_COUNT,
) -> dict[str, Scenario]:
    """The four standard policies: as planned, rail TOD, ring corridor, optimum.

    All alternatives redistribute the planned total evenly over their
    target sets; units are taken from the planned-units file.
    """
    surveyed = {p.neighborhood_id for p in profiles} & set(effects)
    planned_alloc = {p.neighborhood_id: p.units for p in planned if p.units > 0}
    unknown = [nb for nb in planned_alloc if nb not in effects]
    if unknown:
        raise UnknownNeighborhood(unknown)
    total_units = sum(planned_alloc.values())

    walk = rail_walk_minutes(neighborhoods, gravity)
    tod_targets = sorted(
        nb for nb in surveyed if walk.get(nb, float("inf")) < TOD_MAX_WALK_MINUTES
    )
    ring_targets = sorted(
        nb.neighborhood_id
        for nb in neighborhoods
        if nb.inside_or_on_ringbahn and nb.neighborhood_id in surveyed
    )

    surveyed_effects = {nb: e for nb, e in effects.items() if nb in surveyed}
    return {
        "Planned": Scenario("Planned", planned_alloc),
        "TOD_rail": even_split("TOD_rail", tod_targets, total_units, effects),
        "Ringbahn": even_split("Ringbahn", ring_targets, total_units, effects),
        "Optimum": optimize_allocation(
            surveyed_effects, total_units, min(optimum_k, len(surveyed_effects))
        ),
    }


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def scenarios_from_json(doc: dict) -> list[Scenario]:
    return [
        Scenario(item["name"], {str(k): int(v) for k, v in item["allocations"].items()})
        for item in doc["scenarios"]
    ]


def load_scenarios(path) -> list[Scenario]:
    with Path(path).open(encoding="utf-8") as fh:
        return scenarios_from_json(json.load(fh))


def report_to_json(results: Sequence[ScenarioResult], city_mean_outcome: float) -> dict:
    return {
        "schema_version": "scenario-report/1",
        "city_mean_outcome": city_mean_outcome,
        "scenarios": [
            {
                "name": r.name,
                "total_units": r.total_units,
                "induced_mean_emissions": r.induced_mean_emissions,
                "relative_to_average": r.relative_to_average,
                "contributions": [
                    {
                        "neighborhood_id": c.neighborhood_id,
                        "units": c.units,
                        "expected_emissions": c.expected_emissions,
                    }
                    for c in r.contributions
                ],
            }
            for r in results
        ],
    }


def export_effects_geojson(
    neighborhoods: Sequence[NeighborhoodRaw],
    effects: Mapping[str, EffectEstimate],
    allocations: Mapping[str, int] | None = None,
    path=None,
) -> dict:
    """FeatureCollection with per-neighborhood effect (and allocation) properties."""
    features = []
    for nb in neighborhoods:
        effect = effects.get(nb.neighborhood_id)
        props = {
            "neighborhood_id": nb.neighborhood_id,
            "total_effect": effect.total_effect if effect else None,
            "relative_effect": effect.relative_effect if effect else None,
        }
        if allocations is not None:
            props["units"] = int(allocations.get(nb.neighborhood_id, 0))
        if nb.boundary is not None:
            geometry = {
                "type": "Polygon",
                "coordinates": [[[lon, lat] for lat, lon in nb.boundary]],
            }
        else:
            geometry = {"type": "Point", "coordinates": [nb.centroid[1], nb.centroid[0]]}
        features.append({"type": "Feature", "geometry": geometry, "properties": props})
    doc = {"type": "FeatureCollection", "features": features}
    if path is not None:
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(doc, fh)
    return doc
