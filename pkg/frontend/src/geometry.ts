import type { Geometry, NeighborhoodInfo } from "./types.js";

export interface Bounds {
  minLat: number;
  maxLat: number;
  minLon: number;
  maxLon: number;
}

function* coordinatesOf(geometry: Geometry): Generator<[number, number]> {
  if (geometry.type === "Point") {
    yield [geometry.coordinates[0], geometry.coordinates[1]];
    return;
  }
  for (const ring of geometry.coordinates) {
    for (const pt of ring) {
      yield [pt[0], pt[1]];
    }
  }
}

export function computeBounds(neighborhoods: NeighborhoodInfo[]): Bounds {
  let minLat = Infinity,
    maxLat = -Infinity,
    minLon = Infinity,
    maxLon = -Infinity;
  for (const nb of neighborhoods) {
    if (!nb.geometry) continue;
    for (const [lon, lat] of coordinatesOf(nb.geometry)) {
      minLat = Math.min(minLat, lat);
      maxLat = Math.max(maxLat, lat);
      minLon = Math.min(minLon, lon);
      maxLon = Math.max(maxLon, lon);
    }
  }
  if (!Number.isFinite(minLat)) {
    return { minLat: 0, maxLat: 1, minLon: 0, maxLon: 1 };
  }
  return { minLat, maxLat, minLon, maxLon };
}

export type Project = (lon: number, lat: number) => [number, number];

/**
 * Equirectangular projection into a width x height viewport, padded,
 * with the longitude axis compressed by cos(mid latitude) so shapes keep
 * roughly true proportions at city scale.
 */
export function makeProjector(bounds: Bounds, width: number, height: number, pad = 8): Project {
  const midLat = (bounds.minLat + bounds.maxLat) / 2;
  const kx = Math.cos((midLat * Math.PI) / 180);
  const spanX = Math.max((bounds.maxLon - bounds.minLon) * kx, 1e-9);
  const spanY = Math.max(bounds.maxLat - bounds.minLat, 1e-9);
  const scale = Math.min((width - 2 * pad) / spanX, (height - 2 * pad) / spanY);
  const offsetX = (width - spanX * scale) / 2;
  const offsetY = (height - spanY * scale) / 2;
  return (lon, lat) => [
    offsetX + (lon - bounds.minLon) * kx * scale,
    height - offsetY - (lat - bounds.minLat) * scale,
  ];
}

export function polygonPath(geometry: Geometry, project: Project): string {
  if (geometry.type === "Point") {
    return "";
  }
  const parts: string[] = [];
  for (const ring of geometry.coordinates) {
    ring.forEach((pt, i) => {
      const [x, y] = project(pt[0], pt[1]);
      parts.push(`${i === 0 ? "M" : "L"}${x.toFixed(2)},${y.toFixed(2)}`);
    });
    parts.push("Z");
  }
  return parts.join(" ");
}
