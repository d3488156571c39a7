"""Mode-specific life-cycle CO2e accounting for travel diaries.

Default factors are the ITF central estimates in g CO2e per person-km,
with bus/metro style services aggregated into a single transit mode.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import MixedHouseholds
from .ingest import Mode, TripRecord

DEFAULT_FACTORS_G_PER_PKM: dict[Mode, float] = {
    Mode.CAR: 162.0,
    Mode.MOPED: 70.0,
    Mode.TRANSIT: 65.0,
    Mode.BIKE: 20.0,
    Mode.FOOT: 0.0,
}


@dataclass(frozen=True)
class EmissionFactorTable:
    factors_g_per_pkm: Mapping[Mode, float] = field(
        default_factory=lambda: dict(DEFAULT_FACTORS_G_PER_PKM)
    )

    def __post_init__(self):
        missing = [m.value for m in Mode if m not in self.factors_g_per_pkm]
        if missing:
            raise ValueError(f"emission factors missing for modes: {missing}")
        negative = [m.value for m, f in self.factors_g_per_pkm.items() if f < 0]
        if negative:
            raise ValueError(f"negative emission factors for modes: {negative}")

    def factor(self, mode: Mode) -> float:
        return self.factors_g_per_pkm[mode]

    @classmethod
    def from_csv(cls, path) -> "EmissionFactorTable":
        """Load overrides from ``emission_factors.csv`` (mode,factor_g_per_pkm)."""
        factors = dict(DEFAULT_FACTORS_G_PER_PKM)
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                mode = Mode((row["mode"] or "").strip().lower())
                factors[mode] = float(row["factor_g_per_pkm"])
        return cls(factors)


def trip_emissions(trip: TripRecord, factors: EmissionFactorTable) -> float:
    """Grams of CO2e for one trip: factor(mode) x distance, no rounding."""
    return factors.factor(trip.mode) * trip.distance_km


def household_daily_emissions(trips: Iterable[TripRecord], factors: EmissionFactorTable) -> float:
    """kg CO2e per household-day; all trips must belong to one household."""
    trips = list(trips)
    ids = {t.household_id for t in trips}
    if len(ids) > 1:
        raise MixedHouseholds(f"trips span households: {sorted(ids)}")
    return sum(trip_emissions(t, factors) for t in trips) / 1000.0
