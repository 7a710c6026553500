import * as fs from 'node:fs';
import * as os from 'node:os';
import * as path from 'node:path';

import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { decodeArchive } from '../src/ecmk.js';
import { readGray, writeGray } from '../src/image.js';
import { exportMasks } from '../src/exporter.js';
import {
  DEFAULT_OPTIONS,
  ModelLoadError,
  gridPromptPoints,
  gridSegmenter,
  maskIoU,
  loadCheckpointSegmenter,
} from '../src/segmentation.js';

let workDir: string;
let imageDir: string;

/** Flat-shaded scenes: rectangles and a disc over a two-band background. */
function sampleImage(index: number, width = 96, height = 72): Uint8Array {
  const data = new Uint8Array(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      data[y * width + x] = y < height / 2 ? 200 : 60;
    }
  }
  const rx = 10 + ((index * 7) % 30);
  const ry = 8 + ((index * 5) % 20);
  for (let y = ry; y < ry + 24 && y < height; y++) {
    for (let x = rx; x < rx + 30 && x < width; x++) {
      data[y * width + x] = 120;
    }
  }
  const cx = 60 + (index % 3) * 8;
  const cy = 44;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      if ((x - cx) ** 2 + (y - cy) ** 2 < 144) data[y * width + x] = 30 + index;
    }
  }
  return data;
}

beforeAll(() => {
  workDir = fs.mkdtempSync(path.join(os.tmpdir(), 'sam-export-'));
  imageDir = path.join(workDir, 'images');
  fs.mkdirSync(imageDir);
  for (let i = 0; i < 10; i++) {
    writeGray(path.join(imageDir, `img_${String(i).padStart(2, '0')}.png`), {
      width: 96,
      height: 72,
      data: sampleImage(i),
    });
  }
});

afterAll(() => {
  fs.rmSync(workDir, { recursive: true, force: true });
});

describe('grid prompts', () => {
  it('grid density 16 issues exactly 256 points', () => {
    expect(gridPromptPoints(640, 480, 16)).toHaveLength(256);
  });
});

describe('grid segmenter', () => {
  it('blank image yields a single trivial mask', () => {
    const image = { width: 40, height: 30, data: new Uint8Array(1200).fill(99) };
    const masks = gridSegmenter.segment(image, DEFAULT_OPTIONS);
    expect(masks.length).toBe(1);
    expect(Array.from(masks[0].grid).every((v) => v === 1)).toBe(true);
  });

  it('separates flat regions and stays deterministic', () => {
    const image = { width: 96, height: 72, data: sampleImage(3) };
    const a = gridSegmenter.segment(image, DEFAULT_OPTIONS);
    const b = gridSegmenter.segment(image, DEFAULT_OPTIONS);
    expect(a.length).toBeGreaterThanOrEqual(3);
    expect(b.length).toBe(a.length);
    a.forEach((mask, i) => {
      expect(maskIoU(mask.grid, b[i].grid)).toBeGreaterThanOrEqual(0.99);
    });
  });
});

describe('exportMasks', () => {
  it('produces loadable archives, nonempty edge maps, and a manifest', async () => {
    const outDir = path.join(workDir, 'out');
    const summary = await exportMasks({ imageDir, outDir, gridPoints: 16 });
    expect(summary.failures).toHaveLength(0);
    expect(summary.entries).toHaveLength(10);
    for (const entry of summary.entries) {
      const archive = decodeArchive(fs.readFileSync(path.join(outDir, entry.archive)));
      expect(archive.width).toBe(96);
      expect(archive.masks.length).toBe(entry.maskCount);
      expect(archive.masks.length).toBeGreaterThan(0);
      archive.masks.forEach((m) => expect(m.id).toBeGreaterThanOrEqual(1));
      const edges = readGray(path.join(outDir, entry.edges));
      expect(edges.data.some((v) => v > 0)).toBe(true);
    }
    const manifest = JSON.parse(
      fs.readFileSync(path.join(outDir, 'manifest.json'), 'utf-8'),
    );
    expect(manifest.model).toBe('grid-flood-fill');
    expect(manifest.entries).toHaveLength(10);
  });

  it('repeat runs agree at IoU >= 0.99', async () => {
    const outA = path.join(workDir, 'rep-a');
    const outB = path.join(workDir, 'rep-b');
    await exportMasks({ imageDir, outDir: outA, gridPoints: 16 });
    await exportMasks({ imageDir, outDir: outB, gridPoints: 16 });
    for (const name of fs.readdirSync(outA).filter((f) => f.endsWith('.ecmk'))) {
      const a = decodeArchive(fs.readFileSync(path.join(outA, name)));
      const b = decodeArchive(fs.readFileSync(path.join(outB, name)));
      expect(b.masks.length).toBe(a.masks.length);
      a.masks.forEach((mask, i) => {
        expect(maskIoU(mask.grid, b.masks[i].grid)).toBeGreaterThanOrEqual(0.99);
      });
    }
  });

  it('rejects unknown checkpoints with ModelLoadError', async () => {
    await expect(loadCheckpointSegmenter('/nonexistent/model.onnx')).rejects.toBeInstanceOf(
      ModelLoadError,
    );
  });
});
