/** Batch export: one ECMK archive plus one edge PNG per input image. */

import * as fs from 'node:fs';
import * as path from 'node:path';

import { encodeArchive } from './ecmk.js';
import { edgeMapFromMasks } from './edges.js';
import { readGray, writeBinary } from './image.js';
import {
  DEFAULT_OPTIONS,
  Segmenter,
  SegmenterOptions,
  gridSegmenter,
  loadCheckpointSegmenter,
} from './segmentation.js';

export interface ExportJob {
  imageDir: string;
  outDir: string;
  checkpoint?: string;
  gridPoints: number;
}

export interface ExportEntry {
  image: string;
  archive: string;
  edges: string;
  maskCount: number;
}

export interface ExportSummary {
  model: string;
  gridPoints: number;
  entries: ExportEntry[];
  failures: Array<{ image: string; error: string }>;
}

export async function resolveSegmenter(job: ExportJob): Promise<Segmenter> {
  if (job.checkpoint) return loadCheckpointSegmenter(job.checkpoint);
  return gridSegmenter;
}

export async function exportMasks(job: ExportJob): Promise<ExportSummary> {
  const segmenter = await resolveSegmenter(job);
  const options: SegmenterOptions = { ...DEFAULT_OPTIONS, gridPoints: job.gridPoints };
  const images = fs
    .readdirSync(job.imageDir)
    .filter((f) => f.toLowerCase().endsWith('.png'))
    .sort();
  if (images.length === 0) {
    throw new Error(`no .png images under ${job.imageDir}`);
  }
  fs.mkdirSync(job.outDir, { recursive: true });
  const summary: ExportSummary = {
    model: segmenter.name,
    gridPoints: job.gridPoints,
    entries: [],
    failures: [],
  };
  for (const name of images) {
    const stem = name.replace(/\.png$/i, '');
    try {
      const image = readGray(path.join(job.imageDir, name));
      const masks = segmenter.segment(image, options);
      if (masks.length === 0) {
        throw new Error('segmenter produced no masks');
      }
      const archivePath = path.join(job.outDir, `${stem}.ecmk`);
      fs.writeFileSync(
        archivePath,
        encodeArchive({ width: image.width, height: image.height, masks }),
      );
      const edges = edgeMapFromMasks(image, masks);
      const edgesPath = path.join(job.outDir, `${stem}_edges.png`);
      writeBinary(edgesPath, edges, image.width, image.height);
      summary.entries.push({
        image: name,
        archive: path.basename(archivePath),
        edges: path.basename(edgesPath),
        maskCount: masks.length,
      });
    } catch (err) {
      summary.failures.push({ image: name, error: String(err) });
    }
  }
  fs.writeFileSync(
    path.join(job.outDir, 'manifest.json'),
    JSON.stringify(summary, null, 2) + '\n',
  );
  return summary;
}
