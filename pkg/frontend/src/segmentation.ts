/**
 * Grid-prompted mask generation.
 *
 * The built-in backend grows a region from every prompt point of an NxN
 * grid by flood fill over similar intensities, then deduplicates the
 * proposals with IoU-based non-maximum suppression. It is fully
 * deterministic. A foundation-model backend can be plugged in through a
 * checkpoint path instead; loading is attempted lazily and failures raise
 * ModelLoadError.
 */

import type { GrayImage } from './image.js';
import type { Mask } from './ecmk.js';

export class ModelLoadError extends Error {}

export interface SegmenterOptions {
  gridPoints: number; // points per side
  tolerance: number; // intensity distance for region growing
  minArea: number; // proposals below this are discarded
  nmsIoU: number; // overlap threshold for deduplication
}

export const DEFAULT_OPTIONS: SegmenterOptions = {
  gridPoints: 16,
  tolerance: 12,
  minArea: 64,
  nmsIoU: 0.7,
};

export interface Segmenter {
  name: string;
  segment(image: GrayImage, options: SegmenterOptions): Mask[];
}

export function gridPromptPoints(
  width: number,
  height: number,
  gridPoints: number,
): Array<[number, number]> {
  const points: Array<[number, number]> = [];
  for (let j = 0; j < gridPoints; j++) {
    for (let i = 0; i < gridPoints; i++) {
      points.push([
        Math.floor(((i + 0.5) * width) / gridPoints),
        Math.floor(((j + 0.5) * height) / gridPoints),
      ]);
    }
  }
  return points;
}

function floodFill(image: GrayImage, seedX: number, seedY: number, tolerance: number): Uint8Array {
  const { width, height, data } = image;
  const grid = new Uint8Array(width * height);
  const reference = data[seedY * width + seedX];
  const queue = new Int32Array(width * height);
  let head = 0;
  let tail = 0;
  const start = seedY * width + seedX;
  grid[start] = 1;
  queue[tail++] = start;
  while (head < tail) {
    const idx = queue[head++];
    const x = idx % width;
    const y = (idx - x) / width;
    // fixed neighbor order keeps runs bit-identical
    if (x > 0) tryGrow(idx - 1);
    if (x + 1 < width) tryGrow(idx + 1);
    if (y > 0) tryGrow(idx - width);
    if (y + 1 < height) tryGrow(idx + width);
  }
  function tryGrow(next: number): void {
    if (!grid[next] && Math.abs(data[next] - reference) <= tolerance) {
      grid[next] = 1;
      queue[tail++] = next;
    }
  }
  return grid;
}

export function maskIoU(a: Uint8Array, b: Uint8Array): number {
  let inter = 0;
  let union = 0;
  for (let i = 0; i < a.length; i++) {
    const av = a[i] !== 0;
    const bv = b[i] !== 0;
    if (av && bv) inter++;
    if (av || bv) union++;
  }
  return union === 0 ? 0 : inter / union;
}

/** Deterministic flood-fill segmenter prompted on a regular point grid. */
export const gridSegmenter: Segmenter = {
  name: 'grid-flood-fill',
  segment(image, options) {
    const proposals: Array<{ grid: Uint8Array; area: number; order: number }> = [];
    const points = gridPromptPoints(image.width, image.height, options.gridPoints);
    const covered = new Uint8Array(image.width * image.height);
    points.forEach(([x, y], order) => {
      const idx = y * image.width + x;
      if (covered[idx]) return; // an existing proposal already explains it
      const grid = floodFill(image, x, y, options.tolerance);
      let area = 0;
      for (let i = 0; i < grid.length; i++) {
        if (grid[i]) {
          area++;
          covered[i] = 1;
        }
      }
      if (area >= options.minArea) proposals.push({ grid, area, order });
    });

    // larger masks win ties under NMS; stable order for equal areas
    proposals.sort((p, q) => q.area - p.area || p.order - q.order);
    const kept: Array<{ grid: Uint8Array; area: number }> = [];
    for (const candidate of proposals) {
      const overlaps = kept.some((k) => maskIoU(candidate.grid, k.grid) >= options.nmsIoU);
      if (!overlaps) kept.push(candidate);
    }
    return kept.map((k, index) => ({ id: index + 1, grid: k.grid }));
  },
};

/**
 * Placeholder for a checkpoint-backed foundation model. The runtime and the
 * weights ship separately; without them the exporter falls back to the
 * built-in segmenter only when no checkpoint was requested.
 */
export async function loadCheckpointSegmenter(checkpoint: string): Promise<Segmenter> {
  let ort: unknown;
  try {
    ort = await import('onnxruntime-node' as string);
  } catch {
    throw new ModelLoadError(
      `checkpoint ${checkpoint} requires onnxruntime-node, which is not installed`,
    );
  }
  void ort;
  throw new ModelLoadError(
    `loading checkpoint ${checkpoint} is not supported by this build; ` +
      'run without --checkpoint to use the built-in segmenter',
  );
}
