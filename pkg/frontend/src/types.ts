/** Response shapes of the planning API (schema_version api/1). */

export interface PolygonGeometry {
  type: "Polygon";
  coordinates: number[][][]; // rings of [lon, lat]
}

export interface PointGeometry {
  type: "Point";
  coordinates: number[]; // [lon, lat]
}

export type Geometry = PolygonGeometry | PointGeometry;

export interface NeighborhoodInfo {
  neighborhood_id: string;
  outcome_y: number;
  n_households_sampled: number;
  low_support: boolean;
  confounders: Record<string, number>;
  built_env_raw: Record<string, number>;
  treatment: number[] | null;
  theta: number[] | null;
  total_effect: number | null;
  relative_effect: number | null;
  geometry: Geometry | null;
}

export interface NeighborhoodsResponse {
  schema_version: string;
  city_mean_outcome: number;
  neighborhoods: NeighborhoodInfo[];
}

export interface ScenarioContribution {
  neighborhood_id: string;
  units: number;
  expected_emissions: number;
}

export interface ScenarioResultPayload {
  name: string;
  total_units: number;
  induced_mean_emissions: number;
  relative_to_average: number;
  contributions: ScenarioContribution[];
}

export interface PresetsResponse {
  schema_version: string;
  city_mean_outcome: number;
  scenarios: ScenarioResultPayload[];
}

/** Client-side editable allocation; mirrors the server scenario schema. */
export type AllocationDraft = Record<string, number>;

/** Order of the effect-vector components returned in `theta`. */
export const FEATURE_NAMES = [
  "dist_center",
  "dist_subcenter",
  "poi_density",
  "pop_density",
  "mixed_use_share",
  "car_friendliness",
  "walkability",
  "transit_access",
] as const;
