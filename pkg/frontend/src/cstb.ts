/**
 * CSTB array files: little-endian header (magic "CSTB", version 1, ndim,
 * dims as uint32) followed by a row-major float64 payload.  The exchange
 * format between the reconstruction pipeline and this trainer.
 */
import { readFileSync, writeFileSync } from 'node:fs';

export interface CstbArray {
  dims: number[];
  data: Float64Array;
}

const MAGIC = 'CSTB';
const VERSION = 1;

export function readCstb(path: string): CstbArray {
  const buf = readFileSync(path);
  if (buf.length < 12 || buf.toString('latin1', 0, 4) !== MAGIC) {
    throw new Error(`${path}: not a CSTB file`);
  }
  const version = buf.readUInt32LE(4);
  if (version !== VERSION) {
    throw new Error(`${path}: unsupported CSTB version ${version}`);
  }
  const ndim = buf.readUInt32LE(8);
  const dims: number[] = [];
  for (let i = 0; i < ndim; i++) {
    dims.push(buf.readUInt32LE(12 + 4 * i));
  }
  const offset = 12 + 4 * ndim;
  const count = dims.reduce((a, b) => a * b, 1);
  if (buf.length !== offset + 8 * count) {
    throw new Error(`${path}: payload size mismatch`);
  }
  // copy to guarantee alignment for the Float64Array view
  const payload = Buffer.alloc(8 * count);
  buf.copy(payload, 0, offset);
  return {
    dims,
    data: new Float64Array(payload.buffer, 0, count),
  };
}

export function writeCstb(path: string, dims: number[], data: Float64Array): void {
  const count = dims.reduce((a, b) => a * b, 1);
  if (count !== data.length) {
    throw new Error(`dims ${dims} do not match data length ${data.length}`);
  }
  const header = Buffer.alloc(12 + 4 * dims.length);
  header.write(MAGIC, 0, 'latin1');
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt32LE(dims.length, 8);
  dims.forEach((d, i) => header.writeUInt32LE(d, 12 + 4 * i));
  writeFileSync(path, Buffer.concat([header, Buffer.from(data.buffer, data.byteOffset, 8 * count)]));
}
