"""Read-only JSON API over a completed pipeline output directory.

The server never refits anything: it loads artifacts once and answers
queries; scenario evaluation shares the exact code path the CLI uses, so
both produce identical numbers. Requests are stateless and mutate
nothing, so concurrent evaluation is safe.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import pipeline
from .errors import UnknownNeighborhood
from .features import CONFOUNDER_NAMES, FEATURE_NAMES, load_profiles, profiles_to_arrays
from .scenario import Scenario, evaluate_scenario

API_SCHEMA = "api/1"


class EvaluateRequest(BaseModel):
    name: str = Field(default="draft", max_length=120)
    allocations: dict[str, int]


class _State:
    """Lazily loaded artifacts; missing files surface as 409 per request."""

    def __init__(self, output_dir: str):
        self.paths = pipeline.ArtifactPaths(Path(output_dir))
        self._cache: dict = {}

    def _load(self, key, loader):
        if key not in self._cache:
            try:
                self._cache[key] = loader()
            except FileNotFoundError as exc:
                raise HTTPException(
                    status_code=409,
                    detail=f"pipeline artifact missing: {exc.filename or key}",
                ) from exc
        return self._cache[key]

    def profiles(self):
        return self._load("profiles", lambda: load_profiles(self.paths.profiles))

    def effects(self):
        return self._load(
            "effects",
            lambda: {e.neighborhood_id: e for e in pipeline.read_effects_csv(self.paths.effects_csv)},
        )

    def city_mean(self) -> float:
        profiles, _ = self.profiles()
        _, y, _ = profiles_to_arrays(profiles)
        return float(y.mean())

    def _json(self, key, path: Path):
        def loader():
            with path.open(encoding="utf-8") as fh:
                return json.load(fh)

        return self._load(key, loader)

    def metrics(self):
        return self._json("metrics", self.paths.metrics)

    def decomposition(self):
        return self._json("decomposition", self.paths.decomposition)

    def moderation(self):
        return self._json("moderation", self.paths.moderation)

    def scenario_report(self):
        return self._json("scenario_report", self.paths.scenario_report)

    def geometry(self):
        doc = self._json("geometry", self.paths.effects_geojson)
        return {
            f["properties"]["neighborhood_id"]: f["geometry"] for f in doc.get("features", [])
        }


def create_app(output_dir: str, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="carbonform planning API")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    state = _State(output_dir)

    @app.get("/api/neighborhoods")
    def neighborhoods():
        profiles, _ = state.profiles()
        effects = state.effects()
        geometry = state.geometry()
        items = []
        for p in profiles:
            e = effects.get(p.neighborhood_id)
            items.append(
                {
                    "neighborhood_id": p.neighborhood_id,
                    "outcome_y": p.outcome_y,
                    "n_households_sampled": p.n_households_sampled,
                    "low_support": p.low_support,
                    "confounders": {n: getattr(p.confounders, n) for n in CONFOUNDER_NAMES},
                    "built_env_raw": {n: getattr(p.built_env_raw, n) for n in FEATURE_NAMES},
                    "treatment": list(p.treatment) if p.treatment else None,
                    "theta": list(e.theta) if e else None,
                    "total_effect": e.total_effect if e else None,
                    "relative_effect": e.relative_effect if e else None,
                    "geometry": geometry.get(p.neighborhood_id),
                }
            )
        return {
            "schema_version": API_SCHEMA,
            "city_mean_outcome": state.city_mean(),
            "neighborhoods": items,
        }

    @app.get("/api/metrics")
    def metrics():
        return {
            "schema_version": API_SCHEMA,
            **state.metrics(),
            "decomposition": state.decomposition(),
        }

    @app.get("/api/moderation")
    def moderation():
        return {"schema_version": API_SCHEMA, **state.moderation()}

    @app.get("/api/scenarios/presets")
    def presets():
        return {"schema_version": API_SCHEMA, **state.scenario_report()}

    @app.post("/api/scenarios/evaluate")
    def evaluate(request: EvaluateRequest):
        if not request.allocations:
            raise HTTPException(status_code=400, detail="allocations must not be empty")
        if any(u < 0 for u in request.allocations.values()):
            raise HTTPException(status_code=400, detail="units must be non-negative integers")
        if sum(request.allocations.values()) <= 0:
            raise HTTPException(status_code=400, detail="total units must be positive")
        effects = state.effects()
        try:
            draft = Scenario(request.name, dict(request.allocations))
            result = evaluate_scenario(draft, effects, state.city_mean())
        except UnknownNeighborhood as exc:
            raise HTTPException(
                status_code=404, detail={"unknown_ids": exc.ids}
            ) from exc
        return {
            "schema_version": API_SCHEMA,
            "name": result.name,
            "total_units": result.total_units,
            "induced_mean_emissions": result.induced_mean_emissions,
            "relative_to_average": result.relative_to_average,
            "contributions": [
                {
                    "neighborhood_id": c.neighborhood_id,
                    "units": c.units,
                    "expected_emissions": c.expected_emissions,
                }
                for c in result.contributions
            ],
        }

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
