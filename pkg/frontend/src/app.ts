import { ApiClient } from "./api.js";
import { legendStops } from "./colors.js";
import { createEvaluator } from "./debounce.js";
import { renderEditor } from "./editor.js";
import { renderMap } from "./map.js";
import { renderComparison, renderDraftSummary } from "./panel.js";
import { loadDraft, saveDraft, setUnits, totalUnits } from "./state.js";
import type {
  AllocationDraft,
  NeighborhoodInfo,
  ScenarioResultPayload,
} from "./types.js";

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

export async function startApp(api: ApiClient = new ApiClient()): Promise<void> {
  const banner = el("offline-banner");
  let neighborhoods: NeighborhoodInfo[];
  let presets: ScenarioResultPayload[];
  let cityMean: number;
  try {
    const [nbResponse, presetResponse] = await Promise.all([
      api.neighborhoods(),
      api.presets(),
    ]);
    neighborhoods = nbResponse.neighborhoods;
    presets = presetResponse.scenarios;
    cityMean = nbResponse.city_mean_outcome;
  } catch {
    banner.hidden = false;
    return;
  }
  banner.hidden = true;

  const byId = new Map(neighborhoods.map((nb) => [nb.neighborhood_id, nb]));
  let draft: AllocationDraft = loadDraft(window.localStorage);
  let draftResult: ScenarioResultPayload | null = null;
  let selected: string | null = null;

  const evaluator = createEvaluator(
    (allocations, signal) => api.evaluate(allocations, signal),
    {
      onResult(result) {
        draftResult = result;
        refreshPanel();
      },
      onError() {
        draftResult = null;
        banner.hidden = false;
      },
    },
  );

  function refreshPanel(): void {
    renderComparison(el("comparison"), presets, draftResult);
    renderDraftSummary(el("draft-summary"), draftResult, totalUnits(draft), cityMean);
  }

  function refreshEditor(): void {
    const nb = selected !== null ? byId.get(selected) ?? null : null;
    renderEditor(el("editor"), nb, selected !== null ? draft[selected] ?? 0 : 0, {
      onUnits(id, units) {
        draft = setUnits(draft, id, units);
        saveDraft(draft, window.localStorage);
        if (totalUnits(draft) > 0) {
          evaluator.schedule(draft);
        } else {
          draftResult = null;
          refreshPanel();
        }
      },
    });
  }

  const map = renderMap(el("map"), neighborhoods, {
    onSelect(id) {
      selected = id;
      map.setSelected(id);
      refreshEditor();
    },
  });

  const legend = el("legend");
  legend.replaceChildren(
    ...legendStops(map.scale).map((stop) => {
      const chip = document.createElement("span");
      chip.className = "legend-chip";
      const swatch = document.createElement("span");
      swatch.className = "swatch";
      swatch.style.background = stop.color;
      const label = document.createElement("span");
      label.textContent = `${(stop.value * 100).toFixed(0)}%`;
      chip.append(swatch, label);
      return chip;
    }),
  );

  refreshEditor();
  refreshPanel();
  if (totalUnits(draft) > 0) {
    evaluator.schedule(draft);
  }
}

if (typeof document !== "undefined" && document.getElementById("map")) {
  void startApp();
}
