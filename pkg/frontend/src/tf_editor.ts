import type { TfPoint } from './types.js';

// Smallest allowed x-gap between neighboring control points.
export const MIN_GAP = 1e-3;

const BLACK: [number, number, number] = [0, 0, 0];

export const TF_PRESETS: Record<string, TfPoint[]> = {
  grayscale: [
    { x: 0, rgb: BLACK, sigma: 0 },
    { x: 1, rgb: [1, 1, 1], sigma: 10 },
  ],
  warm: [
    { x: 0, rgb: BLACK, sigma: 0 },
    { x: 0.33, rgb: [0.8, 0.1, 0.05], sigma: 3 },
    { x: 0.66, rgb: [1, 0.8, 0.1], sigma: 6 },
    { x: 1, rgb: [1, 1, 1], sigma: 10 },
  ],
  // Two narrow peaks (purple, yellow) over transparent gaps.
  'two-peaks': [
    { x: 0, rgb: BLACK, sigma: 0 },
    { x: 0.3, rgb: [0.6, 0.1, 0.9], sigma: 25 },
    { x: 0.45, rgb: BLACK, sigma: 0 },
    { x: 0.6, rgb: [1, 0.9, 0.1], sigma: 25 },
    { x: 0.75, rgb: BLACK, sigma: 0 },
    { x: 1, rgb: BLACK, sigma: 0 },
  ],
};

function clone(points: TfPoint[]): TfPoint[] {
  return points.map((p) => ({ x: p.x, rgb: [...p.rgb] as [number, number, number], sigma: p.sigma }));
}

export function isValid(points: TfPoint[]): boolean {
  if (points.length < 2) return false;
  if (points[0].x !== 0 || points[points.length - 1].x !== 1) return false;
  for (let i = 1; i < points.length; i++) {
    if (points[i].x <= points[i - 1].x) return false;
  }
  return points.every(
    (p) => p.sigma >= 0 && p.rgb.every((c) => c >= 0 && c <= 1),
  );
}

/** Move a point; endpoints keep their x, interior x clamps inside its
 * neighbors' gap. Color/absorption always update. */
export function movePoint(
  points: TfPoint[], index: number,
  update: { x?: number; rgb?: [number, number, number]; sigma?: number },
): TfPoint[] {
  if (index < 0 || index >= points.length) return points;
  const out = clone(points);
  const p = out[index];
  if (update.x !== undefined && index > 0 && index < points.length - 1) {
    const lo = out[index - 1].x + MIN_GAP;
    const hi = out[index + 1].x - MIN_GAP;
    p.x = Math.min(hi, Math.max(lo, update.x));
  }
  if (update.rgb) p.rgb = update.rgb.map((c) => Math.min(1, Math.max(0, c))) as [number, number, number];
  if (update.sigma !== undefined) p.sigma = Math.max(0, update.sigma);
  return out;
}

/** Insert a point at x; silently rejected when it would violate ordering. */
export function addPoint(
  points: TfPoint[], x: number, rgb: [number, number, number], sigma: number,
): TfPoint[] {
  if (x <= MIN_GAP || x >= 1 - MIN_GAP) return points;
  const out = clone(points);
  let at = out.findIndex((p) => p.x > x);
  if (at < 0) at = out.length - 1;
  if (Math.abs(out[at].x - x) < MIN_GAP || Math.abs(out[at - 1].x - x) < MIN_GAP) {
    return points;
  }
  out.splice(at, 0, { x, rgb: [...rgb] as [number, number, number], sigma: Math.max(0, sigma) });
  return out;
}

/** Delete an interior point; endpoint deletion is rejected. */
export function deletePoint(points: TfPoint[], index: number): TfPoint[] {
  if (index <= 0 || index >= points.length - 1) return points;
  const out = clone(points);
  out.splice(index, 1);
  return out;
}
