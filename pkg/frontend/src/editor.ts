import { formatPercent } from "./colors.js";
import { unitsError } from "./state.js";
import { FEATURE_NAMES } from "./types.js";
import type { NeighborhoodInfo } from "./types.js";

export interface EditorCallbacks {
  onUnits: (id: string, units: number) => void;
}

/**
 * Per-neighborhood allocation editor with the effect breakdown bar.
 * Invalid input shows an inline message and sends nothing to the server.
 */
export function renderEditor(
  container: HTMLElement,
  nb: NeighborhoodInfo | null,
  currentUnits: number,
  callbacks: EditorCallbacks,
): void {
  container.replaceChildren();
  if (!nb) {
    const hint = document.createElement("p");
    hint.className = "hint";
    hint.textContent = "Select a neighborhood on the map.";
    container.appendChild(hint);
    return;
  }

  const heading = document.createElement("h3");
  heading.textContent = `Neighborhood ${nb.neighborhood_id}`;
  container.appendChild(heading);

  const facts = document.createElement("p");
  facts.className = "facts";
  const rel = nb.relative_effect;
  facts.textContent =
    (rel === null ? "no effect estimate" : `built-form effect ${formatPercent(rel)} vs average`) +
    ` · ${nb.n_households_sampled} households sampled` +
    (nb.low_support ? " (low support)" : "");
  container.appendChild(facts);

  const form = document.createElement("div");
  form.className = "unit-editor";
  const input = document.createElement("input");
  input.type = "number";
  input.min = "0";
  input.step = "1";
  input.value = String(currentUnits);
  input.setAttribute("data-role", "units-input");
  const apply = document.createElement("button");
  apply.textContent = "Set units";
  apply.setAttribute("data-role", "units-apply");
  const message = document.createElement("span");
  message.className = "validation";
  message.setAttribute("data-role", "units-error");

  const submit = () => {
    const error = unitsError(input.value);
    if (error) {
      message.textContent = error;
      return;
    }
    message.textContent = "";
    callbacks.onUnits(nb.neighborhood_id, Number(input.value));
  };
  apply.addEventListener("click", submit);
  input.addEventListener("keydown", (event) => {
    if ((event as KeyboardEvent).key === "Enter") submit();
  });

  form.append(input, apply, message);
  container.appendChild(form);

  if (nb.theta) {
    container.appendChild(thetaBreakdown(nb.theta));
  }
}

/** Horizontal bar of |theta| shares per built-form dimension. */
function thetaBreakdown(theta: number[]): HTMLElement {
  const wrap = document.createElement("div");
  wrap.className = "theta-breakdown";
  const caption = document.createElement("h4");
  caption.textContent = "Effect composition (per +1 sd, kg/household/day)";
  wrap.appendChild(caption);
  const total = theta.reduce((s, v) => s + Math.abs(v), 0) || 1;
  theta.forEach((value, i) => {
    const row = document.createElement("div");
    row.className = "theta-row";
    const name = document.createElement("span");
    name.className = "name";
    name.textContent = FEATURE_NAMES[i] ?? `dim ${i}`;
    const track = document.createElement("span");
    track.className = "track";
    const bar = document.createElement("span");
    bar.className = "bar " + (value >= 0 ? "worse" : "better");
    bar.style.width = `${((Math.abs(value) / total) * 100).toFixed(1)}%`;
    track.appendChild(bar);
    const num = document.createElement("span");
    num.className = "value";
    num.textContent = value.toFixed(3);
    row.append(name, track, num);
    wrap.appendChild(row);
  });
  return wrap;
}
