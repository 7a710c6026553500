/** PNG-backed grayscale image helpers for the exporter pipeline. */

import * as fs from 'node:fs';
import { PNG } from 'pngjs';

export interface GrayImage {
  width: number;
  height: number;
  /** Row-major luminance, 0..255. */
  data: Uint8Array;
}

export function readGray(path: string): GrayImage {
  const png = PNG.sync.read(fs.readFileSync(path));
  const n = png.width * png.height;
  const gray = new Uint8Array(n);
  for (let i = 0; i < n; i++) {
    const r = png.data[4 * i];
    const g = png.data[4 * i + 1];
    const b = png.data[4 * i + 2];
    gray[i] = Math.round(0.299 * r + 0.587 * g + 0.114 * b);
  }
  return { width: png.width, height: png.height, data: gray };
}

export function writeGray(path: string, image: GrayImage): void {
  const png = new PNG({ width: image.width, height: image.height });
  for (let i = 0; i < image.data.length; i++) {
    const v = image.data[i];
    png.data[4 * i] = v;
    png.data[4 * i + 1] = v;
    png.data[4 * i + 2] = v;
    png.data[4 * i + 3] = 255;
  }
  fs.writeFileSync(path, PNG.sync.write(png));
}

export function writeBinary(path: string, grid: Uint8Array, width: number, height: number): void {
  writeGray(path, {
    width,
    height,
    data: Uint8Array.from(grid, (v) => (v ? 255 : 0)),
  });
}
