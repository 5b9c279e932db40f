// Canvas painting for the channel grid. Each channel plane becomes one
// grayscale panel, upscaled by an integral factor with nearest-neighbor
// sampling so single-pixel sources stay sharp.

import { grayToRgba, integralScale, StretchMode, stretchBounds, toGray } from './contrast.js';
import { ChannelPlane, QueueItem } from './types.js';

const TARGET_EDGE = 200;

/** "32-frame stack", with a group counter when a depth repeats in the combo. */
export function channelTitle(plane: ChannelPlane, repeatsOfDepth: number): string {
  const base = `${plane.depth}-frame stack`;
  if (repeatsOfDepth > 1) {
    return `${base} · g${plane.group}`;
  }
  return base;
}

export function paintChannel(
  canvas: HTMLCanvasElement,
  plane: ChannelPlane,
  mode: StretchMode,
): void {
  const h = plane.pixels.length;
  const w = h > 0 ? plane.pixels[0].length : 0;
  const [lo, hi] = stretchBounds(plane.pixels, mode);
  const rgba = grayToRgba(toGray(plane.pixels, lo, hi));

  const base = document.createElement('canvas');
  base.width = w;
  base.height = h;
  const baseCtx = base.getContext('2d')!;
  baseCtx.putImageData(new ImageData(rgba, w, h), 0, 0);

  const scale = integralScale(Math.max(w, h), TARGET_EDGE);
  canvas.width = w * scale;
  canvas.height = h * scale;
  const ctx = canvas.getContext('2d')!;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(base, 0, 0, canvas.width, canvas.height);
}

/** Rebuild the grid: one labeled panel per channel, in API order. */
export function renderChannelGrid(
  container: HTMLElement,
  item: QueueItem,
  mode: StretchMode,
): void {
  container.textContent = '';
  const channels = item.channels ?? [];
  const depthCounts = new Map<number, number>();
  for (const plane of channels) {
    depthCounts.set(plane.depth, (depthCounts.get(plane.depth) ?? 0) + 1);
  }
  for (const plane of channels) {
    const panel = document.createElement('figure');
    panel.className = 'channel-panel';
    const canvas = document.createElement('canvas');
    paintChannel(canvas, plane, mode);
    const caption = document.createElement('figcaption');
    caption.textContent = channelTitle(plane, depthCounts.get(plane.depth) ?? 1);
    panel.appendChild(canvas);
    panel.appendChild(caption);
    container.appendChild(panel);
  }
}
