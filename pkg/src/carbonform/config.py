"""Pipeline configuration: input paths, seeds, estimator parameters."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .boosted_trees import GbtParams
from .causal_dml import CausalForestParams
from .features import GravityParams

CONFIG_SCHEMA = "config/1"


@dataclass(frozen=True)
class InputPaths:
    trips: str = "trips.csv"
    households: str = "households.csv"
    neighborhoods: str = "neighborhoods.geojson"
    pois: str = "pois.csv"
    gtfs_dir: str = "gtfs"
    planned_units: str = "planned_units.csv"
    elections: str = "elections.csv"
    emission_factors: str | None = None  # optional override table
    scenarios: str | None = None  # optional extra scenarios.json

    def resolve(self, base: Path) -> "InputPaths":
        def r(p):
            return str((base / p)) if p is not None else None

        return InputPaths(
            trips=r(self.trips),
            households=r(self.households),
            neighborhoods=r(self.neighborhoods),
            pois=r(self.pois),
            gtfs_dir=r(self.gtfs_dir),
            planned_units=r(self.planned_units),
            elections=r(self.elections),
            emission_factors=r(self.emission_factors),
            scenarios=r(self.scenarios),
        )


@dataclass(frozen=True)
class PipelineConfig:
    inputs: InputPaths = field(default_factory=InputPaths)
    output_dir: str = "out"
    seed: int = 0
    folds: int = 5
    min_households: int = 10
    use_weights: bool = True
    gtfs_service_day: str = "tuesday"
    moderation_runs: int = 10
    gbt: GbtParams = field(default_factory=GbtParams)
    forest: CausalForestParams = field(default_factory=CausalForestParams)
    gravity: GravityParams = field(default_factory=GravityParams)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["schema_version"] = CONFIG_SCHEMA
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "PipelineConfig":
        doc = dict(doc)
        version = doc.pop("schema_version", CONFIG_SCHEMA)
        if version != CONFIG_SCHEMA:
            raise ValueError(f"unsupported config schema {version}")
        for key, sub in (("inputs", InputPaths), ("gbt", GbtParams),
                         ("forest", CausalForestParams), ("gravity", GravityParams)):
            if key in doc and isinstance(doc[key], dict):
                doc[key] = sub(**doc[key])
        return cls(**doc)


def load_config(path=None, input_dir=None, output_dir=None, seed=None, folds=None) -> PipelineConfig:
    """Config from file (if given) with command-line overrides applied."""
    if path is not None:
        with Path(path).open(encoding="utf-8") as fh:
            config = PipelineConfig.from_json(json.load(fh))
    else:
        config = PipelineConfig()
    if input_dir is not None:
        config = replace(config, inputs=PipelineConfig().inputs.resolve(Path(input_dir)))
    if output_dir is not None:
        config = replace(config, output_dir=str(output_dir))
    if seed is not None:
        config = replace(config, seed=int(seed))
    if folds is not None:
        config = replace(config, folds=int(folds))
    return config


def save_config(config: PipelineConfig, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(config.to_json(), fh, indent=2)
