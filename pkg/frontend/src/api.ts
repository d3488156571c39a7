import type {
  AllocationDraft,
  NeighborhoodsResponse,
  PresetsResponse,
  ScenarioResultPayload,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public detail: unknown) {
    super(`API error ${status}`);
  }
}

/**
 * Thin typed client over the planning API. The UI computes no emissions
 * itself; every number on screen comes through one of these calls.
 */
export class ApiClient {
  constructor(private base: string = "") {}

  neighborhoods(): Promise<NeighborhoodsResponse> {
    return this.getJson<NeighborhoodsResponse>("/api/neighborhoods");
  }

  presets(): Promise<PresetsResponse> {
    return this.getJson<PresetsResponse>("/api/scenarios/presets");
  }

  async evaluate(
    allocations: AllocationDraft,
    signal?: AbortSignal,
    name = "draft",
  ): Promise<ScenarioResultPayload> {
    const response = await fetch(this.base + "/api/scenarios/evaluate", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ name, allocations }),
      signal,
    });
    if (!response.ok) {
      throw new ApiError(response.status, await safeDetail(response));
    }
    return (await response.json()) as ScenarioResultPayload;
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await fetch(this.base + path);
    if (!response.ok) {
      throw new ApiError(response.status, await safeDetail(response));
    }
    return (await response.json()) as T;
  }
}

async function safeDetail(response: Response): Promise<unknown> {
  try {
    return await response.json();
  } catch {
    return null;
  }
}
