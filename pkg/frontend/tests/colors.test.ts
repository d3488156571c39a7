import { describe, expect, it } from "vitest";

import { divergingColor, formatPercent, legendStops, NEUTRAL_COLOR } from "../src/colors.js";

describe("divergingColor", () => {
  it("anchors zero at the neutral midpoint", () => {
    expect(divergingColor(0, 0.5)).toBe(NEUTRAL_COLOR);
    expect(NEUTRAL_COLOR).toBe("rgb(247, 247, 247)");
  });

  it("maps the extremes to the endpoint colors", () => {
    expect(divergingColor(-0.5, 0.5)).toBe("rgb(33, 102, 172)");
    expect(divergingColor(0.5, 0.5)).toBe("rgb(178, 24, 43)");
  });

  it("clamps beyond the scale", () => {
    expect(divergingColor(-9, 0.5)).toBe(divergingColor(-0.5, 0.5));
    expect(divergingColor(9, 0.5)).toBe(divergingColor(0.5, 0.5));
  });

  it("is monotone toward red for increasing values", () => {
    const red = (c: string) => Number(c.match(/rgb\((\d+)/)![1]);
    const g = (v: number) => red(divergingColor(v, 1));
    expect(g(-1)).toBeLessThan(g(0));
    expect(g(0)).toBeGreaterThanOrEqual(g(0.5) - 255);
    const green = (c: string) => Number(c.split(",")[1]);
    expect(green(divergingColor(0.9, 1))).toBeLessThan(green(divergingColor(0.1, 1)));
  });

  it("falls back to neutral for degenerate inputs", () => {
    expect(divergingColor(Number.NaN, 1)).toBe(NEUTRAL_COLOR);
    expect(divergingColor(0.3, 0)).toBe(NEUTRAL_COLOR);
  });
});

describe("legendStops", () => {
  it("spans -scale..+scale symmetrically", () => {
    const stops = legendStops(0.4, 5);
    expect(stops[0].value).toBeCloseTo(-0.4);
    expect(stops[2].value).toBeCloseTo(0);
    expect(stops[4].value).toBeCloseTo(0.4);
    expect(stops[2].color).toBe(NEUTRAL_COLOR);
  });
});

describe("formatPercent", () => {
  it("formats with sign and one decimal", () => {
    expect(formatPercent(0.168)).toBe("+16.8%");
    expect(formatPercent(-0.309)).toBe("-30.9%");
    expect(formatPercent(0)).toBe("+0.0%");
  });
});
