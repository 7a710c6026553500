/**
 * ECMK mask-archive container.
 *
 * Layout (little-endian):
 *   magic "ECMK" | version u16 | width u32 | height u32 | count u32
 *   per mask: id u32 | run_count u32 | run_count x u32
 *
 * Runs are row-major and alternate starting with a run of zeros; they must
 * cover exactly width*height pixels. Mask ids are >= 1.
 */

export interface Mask {
  id: number;
  /** Row-major binary grid, length width*height, values 0/1. */
  grid: Uint8Array;
}

export interface MaskArchive {
  width: number;
  height: number;
  masks: Mask[];
}

export const ECMK_MAGIC = 'ECMK';
export const ECMK_VERSION = 1;

export function rleEncode(grid: Uint8Array): Uint32Array {
  const runs: number[] = [];
  let current = 0;
  let length = 0;
  for (const value of grid) {
    const bit = value ? 1 : 0;
    if (bit === current) {
      length++;
    } else {
      runs.push(length);
      current = bit;
      length = 1;
    }
  }
  runs.push(length);
  return Uint32Array.from(runs);
}

export function rleDecode(runs: Uint32Array, pixels: number): Uint8Array {
  const grid = new Uint8Array(pixels);
  let offset = 0;
  let value = 0;
  for (const run of runs) {
    if (value) grid.fill(1, offset, offset + run);
    offset += run;
    value ^= 1;
  }
  if (offset !== pixels) {
    throw new Error(`RLE covers ${offset} pixels, expected ${pixels}`);
  }
  return grid;
}

export function encodeArchive(archive: MaskArchive): Buffer {
  const { width, height, masks } = archive;
  const encoded = masks.map((m) => {
    if (m.id < 1) throw new Error(`mask id must be >= 1, got ${m.id}`);
    if (m.grid.length !== width * height) {
      throw new Error(`mask ${m.id} grid length ${m.grid.length} != ${width * height}`);
    }
    if (!m.grid.some((v) => v !== 0)) {
      throw new Error(`mask ${m.id} is empty`);
    }
    return { id: m.id, runs: rleEncode(m.grid) };
  });
  let size = 4 + 2 + 4 + 4 + 4;
  for (const e of encoded) size += 8 + 4 * e.runs.length;
  const buf = Buffer.alloc(size);
  let pos = buf.write(ECMK_MAGIC, 0, 'ascii');
  pos = buf.writeUInt16LE(ECMK_VERSION, pos);
  pos = buf.writeUInt32LE(width, pos);
  pos = buf.writeUInt32LE(height, pos);
  pos = buf.writeUInt32LE(encoded.length, pos);
  for (const e of encoded) {
    pos = buf.writeUInt32LE(e.id, pos);
    pos = buf.writeUInt32LE(e.runs.length, pos);
    for (const run of e.runs) pos = buf.writeUInt32LE(run, pos);
  }
  return buf;
}

export function decodeArchive(buf: Buffer): MaskArchive {
  if (buf.length < 18 || buf.toString('ascii', 0, 4) !== ECMK_MAGIC) {
    throw new Error('not an ECMK archive');
  }
  const version = buf.readUInt16LE(4);
  if (version !== ECMK_VERSION) throw new Error(`unsupported version ${version}`);
  const width = buf.readUInt32LE(6);
  const height = buf.readUInt32LE(10);
  const count = buf.readUInt32LE(14);
  let pos = 18;
  const masks: Mask[] = [];
  for (let i = 0; i < count; i++) {
    if (pos + 8 > buf.length) throw new Error('truncated mask header');
    const id = buf.readUInt32LE(pos);
    const runCount = buf.readUInt32LE(pos + 4);
    pos += 8;
    if (pos + 4 * runCount > buf.length) throw new Error('truncated RLE data');
    const runs = new Uint32Array(runCount);
    for (let r = 0; r < runCount; r++) runs[r] = buf.readUInt32LE(pos + 4 * r);
    pos += 4 * runCount;
    masks.push({ id, grid: rleDecode(runs, width * height) });
  }
  return { width, height, masks };
}
