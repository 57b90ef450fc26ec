/** Reader/writer for the little-endian memory file format.
 *
 * Layout: magic "KGM1", version u32, seed u64, layer count u32 + layer
 * indices u32[], slots u32, heads u32, head width u32; then one record
 * per sub-table (layer u32, slot u32, head u32, generation u32,
 * capacity u32, modulus u64, M u32, multipliers u64[M], rows f32[V*d]);
 * trailing CRC32 over everything before it.
 */

import { crc32 } from "./crc32.js";
import { ChecksumError, FormatError } from "./errors.js";

export interface SubTable {
  layer: number;
  slot: number;
  head: number;
  generation: number;
  capacity: number;
  modulus: bigint;
  multipliers: bigint[];
  rows: Float32Array; // capacity * headWidth, row-major
}

export interface MemoryImage {
  seed: bigint;
  layers: number[];
  slots: number;
  heads: number;
  headWidth: number;
  maxWords: number;
  /** key `${layer}/${slot}/${head}` -> generations in order */
  tables: Map<string, SubTable[]>;
}

export function tableKey(layer: number, slot: number, head: number): string {
  return `${layer}/${slot}/${head}`;
}

class Reader {
  private view: DataView;
  pos = 0;

  constructor(private data: Uint8Array) {
    this.view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  }

  private need(n: number): void {
    if (this.pos + n > this.data.length) {
      throw new FormatError(`truncated file: wanted ${n} bytes at ${this.pos}`);
    }
  }

  u32(): number {
    this.need(4);
    const v = this.view.getUint32(this.pos, true);
    this.pos += 4;
    return v;
  }

  u64(): bigint {
    this.need(8);
    const v = this.view.getBigUint64(this.pos, true);
    this.pos += 8;
    return v;
  }

  f32Array(count: number): Float32Array {
    this.need(4 * count);
    const out = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      out[i] = this.view.getFloat32(this.pos + 4 * i, true);
    }
    this.pos += 4 * count;
    return out;
  }

  bytes(n: number): Uint8Array {
    this.need(n);
    const out = this.data.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }

  get remaining(): number {
    return this.data.length - this.pos;
  }
}

export function parseMemory(data: Uint8Array): MemoryImage {
  if (data.length < 8) {
    throw new FormatError("file shorter than magic + checksum");
  }
  const body = data.subarray(0, data.length - 4);
  const view = new DataView(data.buffer, data.byteOffset + data.length - 4, 4);
  if (view.getUint32(0, true) !== crc32(body)) {
    throw new ChecksumError("CRC32 mismatch");
  }
  const r = new Reader(body);
  const magic = r.bytes(4);
  if (String.fromCharCode(...magic) !== "KGM1") {
    throw new FormatError("bad magic");
  }
  const version = r.u32();
  if (version !== 1) {
    throw new FormatError(`unsupported format version ${version}`);
  }
  const seed = r.u64();
  const layerCount = r.u32();
  const layers: number[] = [];
  for (let i = 0; i < layerCount; i++) layers.push(r.u32());
  const slots = r.u32();
  const heads = r.u32();
  const headWidth = r.u32();

  const tables = new Map<string, SubTable[]>();
  let maxWords = -1;
  while (r.remaining > 0) {
    const layer = r.u32();
    const slot = r.u32();
    const head = r.u32();
    const generation = r.u32();
    const capacity = r.u32();
    const modulus = r.u64();
    const m = r.u32();
    const multipliers: bigint[] = [];
    for (let i = 0; i < m; i++) multipliers.push(r.u64());
    const rows = r.f32Array(capacity * headWidth);
    if (maxWords === -1) maxWords = m;
    else if (maxWords !== m) throw new FormatError("mixed key lengths in file");
    const key = tableKey(layer, slot, head);
    const group = tables.get(key) ?? [];
    if (group.length !== generation) {
      throw new FormatError(`bad generation sequence at ${key}`);
    }
    group.push({ layer, slot, head, generation, capacity, modulus, multipliers, rows });
    tables.set(key, group);
  }
  if (maxWords === -1) {
    throw new FormatError("file holds no sub-table records");
  }
  for (const layer of layers) {
    for (let slot = 0; slot < slots; slot++) {
      for (let head = 0; head < heads; head++) {
        if (!tables.has(tableKey(layer, slot, head))) {
          throw new FormatError(`missing sub-table (${layer},${slot},${head})`);
        }
      }
    }
  }
  return { seed, layers, slots, heads, headWidth, maxWords, tables };
}

export function serializeMemory(image: MemoryImage): Uint8Array {
  const chunks: Uint8Array[] = [];
  const scratch = new DataView(new ArrayBuffer(8));

  const pushU32 = (v: number) => {
    scratch.setUint32(0, v, true);
    chunks.push(new Uint8Array(scratch.buffer.slice(0, 4)));
  };
  const pushU64 = (v: bigint) => {
    scratch.setBigUint64(0, v, true);
    chunks.push(new Uint8Array(scratch.buffer.slice(0, 8)));
  };

  chunks.push(new TextEncoder().encode("KGM1"));
  pushU32(1);
  pushU64(image.seed);
  pushU32(image.layers.length);
  for (const layer of image.layers) pushU32(layer);
  pushU32(image.slots);
  pushU32(image.heads);
  pushU32(image.headWidth);

  for (const layer of image.layers) {
    for (let slot = 0; slot < image.slots; slot++) {
      for (let head = 0; head < image.heads; head++) {
        for (const t of image.tables.get(tableKey(layer, slot, head)) ?? []) {
          pushU32(t.layer);
          pushU32(t.slot);
          pushU32(t.head);
          pushU32(t.generation);
          pushU32(t.capacity);
          pushU64(t.modulus);
          pushU32(t.multipliers.length);
          for (const r of t.multipliers) pushU64(r);
          const rowBytes = new Uint8Array(t.rows.length * 4);
          const rowView = new DataView(rowBytes.buffer);
          for (let i = 0; i < t.rows.length; i++) {
            rowView.setFloat32(i * 4, t.rows[i], true);
          }
          chunks.push(rowBytes);
        }
      }
    }
  }

  const bodyLength = chunks.reduce((n, c) => n + c.length, 0);
  const out = new Uint8Array(bodyLength + 4);
  let offset = 0;
  for (const chunk of chunks) {
    out.set(chunk, offset);
    offset += chunk.length;
  }
  const view = new DataView(out.buffer, bodyLength, 4);
  view.setUint32(0, crc32(out.subarray(0, bodyLength)), true);
  return out;
}
