// Coordinate handling for the annotation canvas.
//
// The raster is displayed at a CSS scale factor; every conversion between
// display (canvas) coordinates and image pixel coordinates goes through
// the two functions below and nowhere else, so drawn boxes map to pixel
// boxes exactly and round-trip unchanged.

import type { BoxArray } from "./types.js";

export interface DisplayBox {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

/** Order corners so min <= max on both axes (drags can go any direction). */
export function normalizeBox(box: DisplayBox): DisplayBox {
  return {
    x0: Math.min(box.x0, box.x1),
    y0: Math.min(box.y0, box.y1),
    x1: Math.max(box.x0, box.x1),
    y1: Math.max(box.y0, box.y1),
  };
}

/** Display (canvas) coordinates to image pixel coordinates. */
export function displayToPixel(box: DisplayBox, scale: number): BoxArray {
  if (!(scale > 0)) throw new Error(`display scale must be positive, got ${scale}`);
  const n = normalizeBox(box);
  return [n.x0 / scale, n.y0 / scale, n.x1 / scale, n.y1 / scale];
}

/** Image pixel coordinates back to display (canvas) coordinates. */
export function pixelToDisplay(box: BoxArray, scale: number): DisplayBox {
  if (!(scale > 0)) throw new Error(`display scale must be positive, got ${scale}`);
  return { x0: box[0] * scale, y0: box[1] * scale, x1: box[2] * scale, y1: box[3] * scale };
}

export function boxWidth(box: DisplayBox): number {
  return Math.abs(box.x1 - box.x0);
}

export function boxHeight(box: DisplayBox): number {
  return Math.abs(box.y1 - box.y0);
}
