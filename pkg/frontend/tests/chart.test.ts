import { describe, expect, it } from "vitest";
import { polylinePoints } from "../src/chart";

const BOX = { width: 100, height: 50, pad: 10 };

describe("delivered-over-time polyline", () => {
  it("is empty without data", () => {
    expect(polylinePoints([], 2, BOX)).toBe("");
  });

  it("maps time to x and volume to y inside the padded box", () => {
    const points = polylinePoints(
      [{ elapsed_s: 0, delivered_ml: 0 }, { elapsed_s: 900, delivered_ml: 2 }],
      2, BOX);
    // x spans pad..width-pad; y=pad when delivered reaches the target
    expect(points).toBe("10,40 90,10");
  });

  it("scales y to the target volume, not the observed maximum", () => {
    const points = polylinePoints(
      [{ elapsed_s: 0, delivered_ml: 0 }, { elapsed_s: 450, delivered_ml: 1 }],
      2, BOX);
    expect(points).toBe("10,40 90,25");
  });

  it("expands the y scale when delivery overshoots the target", () => {
    const points = polylinePoints(
      [{ elapsed_s: 0, delivered_ml: 0 }, { elapsed_s: 100, delivered_ml: 4 }],
      2, BOX);
    expect(points).toBe("10,40 90,10");
  });

  it("keeps a single point at the left edge", () => {
    const points = polylinePoints([{ elapsed_s: 0, delivered_ml: 0.5 }], 2, BOX);
    expect(points).toBe("10,32.5");
  });

  it("survives a zero target with no delivery yet", () => {
    const points = polylinePoints([{ elapsed_s: 10, delivered_ml: 0 }], 0, BOX);
    expect(points).toBe("90,40");
  });
});
