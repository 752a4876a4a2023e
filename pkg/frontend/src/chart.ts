import type { SeriesPoint } from "./state.js";

export interface ChartBox {
  width: number;
  height: number;
  pad: number;
}

function round2(value: number): number {
  return Math.round(value * 100) / 100;
}

/**
 * Delivered-volume-over-time as SVG polyline points. The y axis is scaled
 * to the prescribed volume so the line visibly approaches the target.
 */
export function polylinePoints(
  series: readonly SeriesPoint[],
  targetMl: number,
  box: ChartBox,
): string {
  if (series.length === 0) {
    return "";
  }
  const maxT = Math.max(series[series.length - 1].elapsed_s, 1e-9);
  let maxMl = targetMl > 0 ? targetMl : 0;
  for (const point of series) {
    maxMl = Math.max(maxMl, point.delivered_ml);
  }
  if (maxMl <= 0) {
    maxMl = 1;
  }
  const innerW = box.width - 2 * box.pad;
  const innerH = box.height - 2 * box.pad;
  return series
    .map((point) => {
      const x = box.pad + (point.elapsed_s / maxT) * innerW;
      const y = box.height - box.pad - (point.delivered_ml / maxMl) * innerH;
      return `${round2(x)},${round2(y)}`;
    })
    .join(" ");
}
