// Minimal polyline scaling for the three rolling-metric charts; kept
// dependency-free so the console runs without bundling chart libraries.

export interface PlotBox {
  width: number;
  height: number;
  padding: number;
}

export interface ScaledSeries {
  points: [number, number][];  // pixel coords
  xMin: number;
  xMax: number;
  yMin: number;
  yMax: number;
}

export function scaleSeries(
  series: [number, number][],
  box: PlotBox,
  yMin?: number,
  yMax?: number,
): ScaledSeries {
  if (series.length === 0) {
    return { points: [], xMin: 0, xMax: 1, yMin: yMin ?? 0, yMax: yMax ?? 1 };
  }
  const xs = series.map((p) => p[0]);
  const ys = series.map((p) => p[1]);
  const x0 = Math.min(...xs);
  const x1 = Math.max(...xs);
  const y0 = yMin ?? Math.min(...ys);
  const y1raw = yMax ?? Math.max(...ys);
  const y1 = y1raw === y0 ? y0 + 1 : y1raw;
  const w = box.width - 2 * box.padding;
  const h = box.height - 2 * box.padding;
  const sx = x1 === x0 ? 0 : w / (x1 - x0);
  const points: [number, number][] = series.map(([x, y]) => [
    box.padding + (x - x0) * sx,
    box.height - box.padding - ((y - y0) / (y1 - y0)) * h,
  ]);
  return { points, xMin: x0, xMax: x1, yMin: y0, yMax: y1 };
}
