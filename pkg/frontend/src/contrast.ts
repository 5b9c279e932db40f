// Grayscale mapping for channel planes. Both stretches are monotone
// non-decreasing in the pixel value, so they never reorder intensities;
// they only choose which range gets the 0..255 span.

export type StretchMode = 'minmax' | 'percentile';

export const STRETCH_MODES: readonly StretchMode[] = ['minmax', 'percentile'];

/** Linearly interpolated percentile of a pre-sorted array, p in [0, 100]. */
export function percentileOfSorted(sorted: number[], p: number): number {
  if (sorted.length === 0) {
    throw new Error('percentile of empty array');
  }
  if (p < 0 || p > 100) {
    throw new Error(`percentile must be in [0, 100], got ${p}`);
  }
  const pos = (p / 100) * (sorted.length - 1);
  const lo = Math.floor(pos);
  const hi = Math.ceil(pos);
  if (lo === hi) {
    return sorted[lo];
  }
  return sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
}

/**
 * Display bounds for one channel: the full value range, or the 1st..99th
 * percentile range, which keeps a single hot pixel from crushing the rest
 * of the frame to black.
 */
export function stretchBounds(pixels: number[][], mode: StretchMode): [number, number] {
  const flat: number[] = [];
  for (const row of pixels) {
    for (const v of row) {
      flat.push(v);
    }
  }
  if (flat.length === 0) {
    throw new Error('empty channel plane');
  }
  flat.sort((a, b) => a - b);
  if (mode === 'minmax') {
    return [flat[0], flat[flat.length - 1]];
  }
  return [percentileOfSorted(flat, 1), percentileOfSorted(flat, 99)];
}

/**
 * Map a channel plane to row-major 8-bit gray. Values at or below lo render
 * black, at or above hi render white. A flat plane (hi <= lo) renders
 * uniform mid-gray rather than dividing by zero.
 */
export function toGray(pixels: number[][], lo: number, hi: number): Uint8ClampedArray<ArrayBuffer> {
  const h = pixels.length;
  const w = h > 0 ? pixels[0].length : 0;
  const out = new Uint8ClampedArray(w * h);
  if (hi <= lo) {
    out.fill(128);
    return out;
  }
  const span = hi - lo;
  let k = 0;
  for (const row of pixels) {
    if (row.length !== w) {
      throw new Error(`ragged channel plane: row of ${row.length}, expected ${w}`);
    }
    for (const v of row) {
      const t = (v - lo) / span;
      out[k++] = Math.round(255 * Math.min(1, Math.max(0, t)));
    }
  }
  return out;
}

/** Gray bytes expanded to RGBA for ImageData. */
export function grayToRgba(gray: Uint8ClampedArray): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(gray.length * 4);
  for (let i = 0; i < gray.length; i++) {
    out[i * 4] = gray[i];
    out[i * 4 + 1] = gray[i];
    out[i * 4 + 2] = gray[i];
    out[i * 4 + 3] = 255;
  }
  return out;
}

/** Largest integral upscale that fits the target edge length (>= 1). */
export function integralScale(size: number, target: number): number {
  return Math.max(1, Math.floor(target / size));
}
