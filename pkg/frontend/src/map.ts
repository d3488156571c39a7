import { divergingColor } from "./colors.js";
import { computeBounds, makeProjector, polygonPath } from "./geometry.js";
import type { NeighborhoodInfo } from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

export interface MapOptions {
  width?: number;
  height?: number;
  onSelect: (id: string) => void;
}

export interface MapHandle {
  setSelected(id: string | null): void;
  /** Color scale extent used (max |relative effect|). */
  scale: number;
}

/** Choropleth of relative effects; clicking a neighborhood selects it. */
export function renderMap(
  container: HTMLElement,
  neighborhoods: NeighborhoodInfo[],
  options: MapOptions,
): MapHandle {
  const width = options.width ?? 640;
  const height = options.height ?? 560;
  const bounds = computeBounds(neighborhoods);
  const project = makeProjector(bounds, width, height);
  const scale = Math.max(
    1e-9,
    ...neighborhoods.map((nb) => Math.abs(nb.relative_effect ?? 0)),
  );

  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("class", "effect-map");
  svg.setAttribute("role", "img");

  const byId = new Map<string, SVGElement>();
  for (const nb of neighborhoods) {
    if (!nb.geometry) continue;
    let shape: SVGElement;
    if (nb.geometry.type === "Polygon") {
      shape = document.createElementNS(SVG_NS, "path");
      shape.setAttribute("d", polygonPath(nb.geometry, project));
    } else {
      const [x, y] = project(nb.geometry.coordinates[0], nb.geometry.coordinates[1]);
      shape = document.createElementNS(SVG_NS, "circle");
      shape.setAttribute("cx", String(x));
      shape.setAttribute("cy", String(y));
      shape.setAttribute("r", "6");
    }
    shape.setAttribute("class", "zone" + (nb.low_support ? " low-support" : ""));
    shape.setAttribute("data-id", nb.neighborhood_id);
    shape.setAttribute("fill", divergingColor(nb.relative_effect ?? 0, scale));
    const title = document.createElementNS(SVG_NS, "title");
    const rel = nb.relative_effect;
    title.textContent =
      `${nb.neighborhood_id}: ` +
      (rel === null ? "no estimate" : `${(rel * 100).toFixed(1)}% vs average`);
    shape.appendChild(title);
    shape.addEventListener("click", () => options.onSelect(nb.neighborhood_id));
    svg.appendChild(shape);
    byId.set(nb.neighborhood_id, shape);
  }
  container.replaceChildren(svg);

  let selected: string | null = null;
  return {
    scale,
    setSelected(id: string | null) {
      if (selected !== null) byId.get(selected)?.classList.remove("selected");
      selected = id;
      if (id !== null) byId.get(id)?.classList.add("selected");
    },
  };
}
