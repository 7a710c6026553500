/** Sobel + non-maximum suppression edge maps from mask boundaries. */

import type { GrayImage } from './image.js';
import type { Mask } from './ecmk.js';

export function maskBoundary(grid: Uint8Array, width: number, height: number): Uint8Array {
  const out = new Uint8Array(grid.length);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const idx = y * width + x;
      if (!grid[idx]) continue;
      const border =
        x === 0 ||
        y === 0 ||
        x === width - 1 ||
        y === height - 1 ||
        !grid[idx - 1] ||
        !grid[idx + 1] ||
        !grid[idx - width] ||
        !grid[idx + width];
      if (border) out[idx] = 1;
    }
  }
  return out;
}

function sobel(image: GrayImage): { gx: Float64Array; gy: Float64Array; mag: Float64Array } {
  const { width, height, data } = image;
  const gx = new Float64Array(width * height);
  const gy = new Float64Array(width * height);
  const mag = new Float64Array(width * height);
  const at = (x: number, y: number): number => {
    const cx = Math.min(width - 1, Math.max(0, x));
    const cy = Math.min(height - 1, Math.max(0, y));
    return data[cy * width + cx];
  };
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const dx =
        -at(x - 1, y - 1) + at(x + 1, y - 1) +
        -2 * at(x - 1, y) + 2 * at(x + 1, y) +
        -at(x - 1, y + 1) + at(x + 1, y + 1);
      const dy =
        -at(x - 1, y - 1) - 2 * at(x, y - 1) - at(x + 1, y - 1) +
        at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1);
      const idx = y * width + x;
      gx[idx] = dx;
      gy[idx] = dy;
      mag[idx] = Math.hypot(dx, dy);
    }
  }
  return { gx, gy, mag };
}

const TAN_22_5 = Math.tan((22.5 * Math.PI) / 180);
const TAN_67_5 = Math.tan((67.5 * Math.PI) / 180);

/**
 * Boundary pixels of all masks, thinned: a pixel survives when its image
 * gradient is a local maximum along the gradient direction.
 */
export function edgeMapFromMasks(image: GrayImage, masks: Mask[]): Uint8Array {
  const { width, height } = image;
  const union = new Uint8Array(width * height);
  for (const mask of masks) {
    const boundary = maskBoundary(mask.grid, width, height);
    for (let i = 0; i < union.length; i++) if (boundary[i]) union[i] = 1;
  }
  const { gx, gy, mag } = sobel(image);
  const out = new Uint8Array(width * height);
  const magAt = (x: number, y: number): number =>
    x < 0 || y < 0 || x >= width || y >= height ? 0 : mag[y * width + x];
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const idx = y * width + x;
      if (!union[idx]) continue;
      const ax = Math.abs(gx[idx]);
      const ay = Math.abs(gy[idx]);
      const m = mag[idx];
      let keep: boolean;
      if (ay < TAN_22_5 * ax) {
        keep = m > magAt(x - 1, y) && m >= magAt(x + 1, y);
      } else if (ay > TAN_67_5 * ax) {
        keep = m > magAt(x, y - 1) && m >= magAt(x, y + 1);
      } else if (gx[idx] * gy[idx] >= 0) {
        keep = m > magAt(x - 1, y - 1) && m > magAt(x + 1, y + 1);
      } else {
        keep = m > magAt(x + 1, y - 1) && m > magAt(x - 1, y + 1);
      }
      if (keep && m > 0) out[idx] = 1;
    }
  }
  return out;
}
