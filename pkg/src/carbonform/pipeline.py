"""Stage-by-stage pipeline drivers shared by the CLI and tests.

Every stage reads the raw inputs and/or earlier artifacts from the
output directory and writes its own artifacts; identical inputs plus an
identical seed reproduce artifacts byte for byte.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import causal_dml, explain, features, gtfs, ingest, scenario
from .config import PipelineConfig
from .emissions import EmissionFactorTable
from .errors import MissingFile
from .seeding import child_seed

MODEL_SCHEMA = "model-bundle/1"


@dataclass(frozen=True)
class ArtifactPaths:
    base: Path

    @property
    def ingest_report(self) -> Path:
        return self.base / "ingest_report.json"

    @property
    def profiles(self) -> Path:
        return self.base / "profiles.json"

    @property
    def features_csv(self) -> Path:
        return self.base / "features.csv"

    @property
    def model(self) -> Path:
        return self.base / "model.json"

    @property
    def effects_csv(self) -> Path:
        return self.base / "effects.csv"

    @property
    def effects_geojson(self) -> Path:
        return self.base / "effects.geojson"

    @property
    def metrics(self) -> Path:
        return self.base / "metrics.json"

    @property
    def decomposition(self) -> Path:
        return self.base / "decomposition.json"

    @property
    def moderation(self) -> Path:
        return self.base / "moderation.json"

    @property
    def scenario_report(self) -> Path:
        return self.base / "scenario_report.json"

    def shap_csv(self, dim: str) -> Path:
        return self.base / f"shap_{dim}.csv"


def artifacts(config: PipelineConfig) -> ArtifactPaths:
    base = Path(config.output_dir)
    base.mkdir(parents=True, exist_ok=True)
    return ArtifactPaths(base)


def _factors(config: PipelineConfig) -> EmissionFactorTable:
    if config.inputs.emission_factors:
        return EmissionFactorTable.from_csv(config.inputs.emission_factors)
    return EmissionFactorTable()


def load_raw_inputs(config: PipelineConfig) -> dict:
    """Parse every input file; returns records plus the combined issue list."""
    shares, election_issues = ingest.parse_elections(config.inputs.elections)
    nbs = ingest.parse_neighborhoods(config.inputs.neighborhoods, shares)
    lat = [nb.centroid[0] for nb in nbs.records]
    lon = [nb.centroid[1] for nb in nbs.records]
    bbox = (min(lat) - 0.5, min(lon) - 0.5, max(lat) + 0.5, max(lon) + 0.5) if lat else None
    trips = ingest.parse_trips(config.inputs.trips)
    households = ingest.parse_households(config.inputs.households)
    pois = ingest.parse_pois(config.inputs.pois, bounding_box=bbox)
    bundle = gtfs.parse_gtfs(config.inputs.gtfs_dir, config.gtfs_service_day)
    planned = ingest.parse_planned_units(config.inputs.planned_units)
    issues = (
        election_issues + nbs.issues + trips.issues + households.issues
        + pois.issues + bundle.issues + planned.issues
    )
    return {
        "neighborhoods": nbs.records,
        "trips": trips.records,
        "households": households.records,
        "pois": pois.records,
        "gtfs": bundle,
        "planned": planned.records,
        "issues": issues,
    }


def run_ingest(config: PipelineConfig) -> dict:
    paths = artifacts(config)
    data = load_raw_inputs(config)
    report = {
        "schema_version": "ingest-report/1",
        "counts": {
            "neighborhoods": len(data["neighborhoods"]),
            "households": len(data["households"]),
            "trips": len(data["trips"]),
            "pois": len(data["pois"]),
            "gtfs_stops": len(data["gtfs"].stops),
            "gtfs_departures": len(data["gtfs"].departures),
            "planned_units_rows": len(data["planned"]),
        },
        "issues": [
            {"kind": i.kind, "source": i.source, "row": i.row, "message": i.message}
            for i in data["issues"]
        ],
    }
    with paths.ingest_report.open("w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    return report


def run_features(config: PipelineConfig) -> list[features.NeighborhoodProfile]:
    paths = artifacts(config)
    data = load_raw_inputs(config)
    if data["issues"]:
        head = "; ".join(str(i) for i in data["issues"][:5])
        raise ValueError(f"{len(data['issues'])} invalid input row(s); run ingest for the report: {head}")
    profiles, encoder = features.build_profiles(
        data["neighborhoods"], data["households"], data["trips"], data["pois"],
        data["gtfs"], _factors(config), config.gravity,
        min_households=config.min_households, use_weights=config.use_weights,
    )
    features.save_profiles(profiles, encoder, paths.profiles)
    features.write_features_csv(profiles, paths.features_csv)
    return profiles


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingFile(str(path))
    return path


def run_fit(config: PipelineConfig) -> causal_dml.CausalForestModel:
    paths = artifacts(config)
    profiles, _ = features.load_profiles(_require(paths.profiles))
    residuals = causal_dml.residualize_profiles(
        profiles, replace(config.gbt, seed=child_seed(config.seed, "nuisance")),
        n_folds=config.folds, seed=child_seed(config.seed, "crossfit"),
    )
    model = causal_dml.fit_causal_forest(
        features.profiles_to_arrays(profiles)[0], residuals,
        replace(config.forest, seed=child_seed(config.seed, "forest")),
    )
    bundle = {
        "schema_version": MODEL_SCHEMA,
        "seed": config.seed,
        "folds": config.folds,
        "residualized": {
            "y_res": residuals.y_res.tolist(),
            "t_res": residuals.t_res.tolist(),
            "fold_assignment": residuals.fold_assignment.tolist(),
            "nuisance_r2_y": residuals.nuisance_r2_y,
            "nuisance_r2_t": residuals.nuisance_r2_t,
            "nuisance_r2_t_dims": list(residuals.nuisance_r2_t_dims),
            "y_nuisance_pred": residuals.y_nuisance_pred.tolist(),
        },
        "forest": causal_dml.forest_to_json(model),
    }
    with paths.model.open("w", encoding="utf-8") as fh:
        json.dump(bundle, fh)
    return model


def load_model_bundle(paths: ArtifactPaths) -> tuple[causal_dml.CausalForestModel, causal_dml.ResidualizedData]:
    with _require(paths.model).open(encoding="utf-8") as fh:
        bundle = json.load(fh)
    if bundle.get("schema_version") != MODEL_SCHEMA:
        raise ValueError(f"unsupported model bundle schema {bundle.get('schema_version')}")
    model = causal_dml.forest_from_json(bundle["forest"])
    r = bundle["residualized"]
    residuals = causal_dml.ResidualizedData(
        y_res=np.array(r["y_res"], dtype=np.float64),
        t_res=np.array(r["t_res"], dtype=np.float64),
        fold_assignment=np.array(r["fold_assignment"], dtype=np.int64),
        nuisance_r2_y=float(r["nuisance_r2_y"]),
        nuisance_r2_t=float(r["nuisance_r2_t"]),
        nuisance_r2_t_dims=tuple(r["nuisance_r2_t_dims"]),
        y_nuisance_pred=np.array(r["y_nuisance_pred"], dtype=np.float64),
    )
    return model, residuals


def write_effects_csv(estimates, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["neighborhood_id"]
            + [f"theta_{name}" for name in features.FEATURE_NAMES]
            + ["total_effect", "relative_effect"]
        )
        for e in estimates:
            writer.writerow(
                [e.neighborhood_id]
                + [repr(float(v)) for v in e.theta]
                + [repr(float(e.total_effect)), repr(float(e.relative_effect))]
            )


def read_effects_csv(path) -> list[causal_dml.EffectEstimate]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [
        causal_dml.EffectEstimate(
            neighborhood_id=r["neighborhood_id"],
            theta=tuple(float(r[f"theta_{n}"]) for n in features.FEATURE_NAMES),
            total_effect=float(r["total_effect"]),
            relative_effect=float(r["relative_effect"]),
        )
        for r in rows
    ]


def run_effects(config: PipelineConfig) -> list[causal_dml.EffectEstimate]:
    paths = artifacts(config)
    profiles, _ = features.load_profiles(_require(paths.profiles))
    model, residuals = load_model_bundle(paths)
    estimates = causal_dml.estimate_effects(model, profiles)
    write_effects_csv(estimates, paths.effects_csv)

    _, y, _ = features.profiles_to_arrays(profiles)
    totals = np.array([e.total_effect for e in estimates])
    metrics = causal_dml.fit_metrics(y, residuals.y_nuisance_pred, totals, residuals)
    metrics["schema_version"] = "metrics/1"
    with paths.metrics.open("w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)

    data = load_raw_inputs(config)
    effects_by_id = {e.neighborhood_id: e for e in estimates}
    scenario.export_effects_geojson(
        data["neighborhoods"], effects_by_id, path=paths.effects_geojson
    )
    return estimates


def run_decompose(config: PipelineConfig) -> dict:
    paths = artifacts(config)
    estimates = read_effects_csv(_require(paths.effects_csv))
    doc = causal_dml.decompose_estimates(estimates)
    doc["schema_version"] = "decomposition/1"
    with paths.decomposition.open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return doc


def run_explain(config: PipelineConfig) -> explain.ModerationReport:
    paths = artifacts(config)
    profiles, _ = features.load_profiles(_require(paths.profiles))
    model, _ = load_model_bundle(paths)
    X, y, T = features.profiles_to_arrays(profiles)
    ids = [p.neighborhood_id for p in profiles]
    for dim, matrix in explain.shap_by_dimension(model, X).items():
        explain.write_shap_csv(matrix, X, features.CONFOUNDER_NAMES, ids, paths.shap_csv(dim))
    report = explain.moderation_analysis(
        X, y, T, confounder_names=features.CONFOUNDER_NAMES,
        gbt_params=replace(config.gbt, seed=0),
        forest_params=replace(config.forest, seed=0),
        n_folds=config.folds, n_runs=config.moderation_runs,
        master_seed=child_seed(config.seed, "moderation"),
    )
    with paths.moderation.open("w", encoding="utf-8") as fh:
        json.dump(explain.moderation_report_to_json(report), fh, indent=2)
    return report


def run_scenario(config: PipelineConfig) -> list[scenario.ScenarioResult]:
    paths = artifacts(config)
    profiles, _ = features.load_profiles(_require(paths.profiles))
    estimates = read_effects_csv(_require(paths.effects_csv))
    effects_by_id = {e.neighborhood_id: e for e in estimates}
    data = load_raw_inputs(config)
    _, y, _ = features.profiles_to_arrays(profiles)
    y_bar = float(y.mean())

    presets = scenario.preset_scenarios(
        data["neighborhoods"], profiles, effects_by_id, data["planned"], config.gravity
    )
    evaluated = [scenario.evaluate_scenario(s, effects_by_id, y_bar) for s in presets.values()]
    if config.inputs.scenarios:
        for extra in scenario.load_scenarios(config.inputs.scenarios):
            evaluated.append(scenario.evaluate_scenario(extra, effects_by_id, y_bar))
    evaluated.sort(key=lambda r: r.name)

    doc = scenario.report_to_json(evaluated, y_bar)
    with paths.scenario_report.open("w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)

    planned_alloc = presets["Planned"].allocations
    scenario.export_effects_geojson(
        data["neighborhoods"], effects_by_id, allocations=planned_alloc,
        path=paths.effects_geojson,
    )
    return evaluated


def run_all(config: PipelineConfig, include_explain: bool = False) -> None:
    run_ingest(config)
    run_features(config)
    run_fit(config)
    run_effects(config)
    run_decompose(config)
    if include_explain:
        run_explain(config)
    run_scenario(config)
