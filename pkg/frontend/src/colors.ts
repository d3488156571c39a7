/**
 * Diverging color scale for relative effects, centered at zero.
 *
 * Negative (emissions below the city average) runs toward blue,
 * positive toward red, zero is the neutral midpoint. The same scale is
 * used for the map legend, matching the CLI's GeoJSON export convention
 * that negative total effects mean lower induced emissions.
 */

const NEGATIVE: [number, number, number] = [33, 102, 172];
const NEUTRAL: [number, number, number] = [247, 247, 247];
const POSITIVE: [number, number, number] = [178, 24, 43];

function mix(a: [number, number, number], b: [number, number, number], t: number): string {
  const c = a.map((v, i) => Math.round(v + (b[i] - v) * t));
  return `rgb(${c[0]}, ${c[1]}, ${c[2]})`;
}

export function divergingColor(value: number, scale: number): string {
  if (!Number.isFinite(value) || scale <= 0) return mix(NEUTRAL, NEUTRAL, 0);
  const t = Math.max(-1, Math.min(1, value / scale));
  if (t < 0) return mix(NEUTRAL, NEGATIVE, -t);
  return mix(NEUTRAL, POSITIVE, t);
}

export const NEUTRAL_COLOR = mix(NEUTRAL, NEUTRAL, 0);

export interface LegendStop {
  value: number;
  color: string;
}

export function legendStops(scale: number, n = 5): LegendStop[] {
  const stops: LegendStop[] = [];
  for (let i = 0; i < n; i++) {
    const value = -scale + (2 * scale * i) / (n - 1);
    stops.push({ value, color: divergingColor(value, scale) });
  }
  return stops;
}

/** Signed percent with one decimal, e.g. +16.8% / -30.9%. */
export function formatPercent(fraction: number): string {
  const pct = fraction * 100;
  const sign = pct >= 0 ? "+" : "";
  return `${sign}${pct.toFixed(1)}%`;
}
