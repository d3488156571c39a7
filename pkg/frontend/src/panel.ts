import { formatPercent } from "./colors.js";
import type { ScenarioResultPayload } from "./types.js";

export interface PanelRow {
  name: string;
  relative: number;
  isDraft?: boolean;
}

/**
 * Comparison bars: preset strategies plus the current draft, all as
 * induced emissions relative to the city average. Values are rendered
 * exactly as the server reported them.
 */
export function renderComparison(
  container: HTMLElement,
  presets: ScenarioResultPayload[],
  draft: ScenarioResultPayload | null,
): void {
  const rows: PanelRow[] = presets.map((p) => ({
    name: p.name,
    relative: p.relative_to_average,
  }));
  if (draft) {
    rows.push({ name: draft.name, relative: draft.relative_to_average, isDraft: true });
  }
  const extent = Math.max(0.01, ...rows.map((r) => Math.abs(r.relative)));

  const list = document.createElement("div");
  list.className = "comparison";
  for (const row of rows) {
    const item = document.createElement("div");
    item.className = "comparison-row" + (row.isDraft ? " draft" : "");
    item.dataset.name = row.name;

    const label = document.createElement("span");
    label.className = "name";
    label.textContent = row.name;

    const track = document.createElement("span");
    track.className = "track";
    const bar = document.createElement("span");
    bar.className = "bar " + (row.relative >= 0 ? "worse" : "better");
    const half = Math.min(1, Math.abs(row.relative) / extent) * 50;
    bar.style.width = `${half.toFixed(1)}%`;
    bar.style[row.relative >= 0 ? "left" : "right"] = "50%";
    track.appendChild(bar);

    const value = document.createElement("span");
    value.className = "value";
    value.textContent = formatPercent(row.relative);

    item.append(label, track, value);
    list.appendChild(item);
  }
  container.replaceChildren(list);
}

export function renderDraftSummary(
  container: HTMLElement,
  result: ScenarioResultPayload | null,
  totalUnits: number,
  cityMean: number,
): void {
  container.replaceChildren();
  if (totalUnits <= 0) {
    const hint = document.createElement("p");
    hint.className = "hint";
    hint.textContent = "Allocate units on the map to evaluate a draft.";
    container.appendChild(hint);
    return;
  }
  if (!result) return;
  const p = document.createElement("p");
  p.className = "draft-summary";
  p.innerHTML =
    `<strong data-field="relative">${formatPercent(result.relative_to_average)}</strong>` +
    ` vs city average — ${result.induced_mean_emissions.toFixed(3)} kg/household/day` +
    ` over ${result.total_units.toLocaleString()} units (city mean ${cityMean.toFixed(3)})`;
  container.appendChild(p);
}
