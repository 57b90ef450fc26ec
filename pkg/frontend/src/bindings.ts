/** Bound operations over the native keygram artifacts.
 *
 * Retrieval and sparse updates run directly against the loaded memory
 * image (the file format is the store's interface); instruction parsing
 * goes through the native CLI so the single rule-based extractor stays
 * authoritative. A handle may be shared for concurrent retrieval, but
 * updates need external serialization (single writer).
 */

import { execFileSync } from "node:child_process";
import { readFileSync } from "node:fs";

import {
  AddressOutOfRangeError,
  LifecycleError,
  NativeCliError,
  SlotMismatchError,
} from "./errors.js";
import { hashRow } from "./hash.js";
import { MemoryImage, SubTable, parseMemory, serializeMemory, tableKey } from "./kgm.js";
import { encodeGram, normalize } from "./text.js";

const fround = Math.fround;

export interface RowUpdate {
  layer: number;
  slot: number;
  head: number;
  generation: number;
  row: number;
  delta: number[] | Float32Array;
}

export class BoundMemoryHandle {
  private image: MemoryImage | null;

  constructor(image: MemoryImage) {
    this.image = image;
  }

  get open(): boolean {
    return this.image !== null;
  }

  /** Config echo: slot/head/width/layer layout of the loaded memory. */
  get config(): { slots: number; heads: number; headWidth: number; layers: number[] } {
    const image = this.require();
    return {
      slots: image.slots,
      heads: image.heads,
      headWidth: image.headWidth,
      layers: [...image.layers],
    };
  }

  require(): MemoryImage {
    if (this.image === null) {
      throw new LifecycleError("handle is closed");
    }
    return this.image;
  }

  close(): void {
    this.image = null;
  }
}

export function openMemory(path: string): BoundMemoryHandle {
  return new BoundMemoryHandle(parseMemory(new Uint8Array(readFileSync(path))));
}

export function closeMemory(handle: BoundMemoryHandle): void {
  handle.close();
}

function cliBinary(): string {
  return process.env.KEYGRAM_CLI ?? "keygram";
}

export function runCli(args: string[]): string {
  try {
    return execFileSync(cliBinary(), args, { encoding: "utf-8" });
  } catch (error) {
    const err = error as { status?: number; stderr?: string; message?: string };
    throw new NativeCliError(
      `keygram ${args[0]} failed (exit ${err.status}): ${err.stderr ?? err.message}`,
    );
  }
}

/** Instruction -> exactly `budget` key-gram strings, via the native parser. */
export function boundExtract(
  instruction: string,
  budget: number,
  maxWords = 4,
): string[] {
  const out = runCli([
    "extract",
    "--instruction", instruction,
    "--budget", String(budget),
    "--max-words", String(maxWords),
  ]);
  const parsed = JSON.parse(out) as { keywords: string[] };
  if (!Array.isArray(parsed.keywords)) {
    throw new NativeCliError("extract returned no keywords array");
  }
  return parsed.keywords;
}

function segmentTables(image: MemoryImage, layer: number): SubTable[] {
  if (!image.layers.includes(layer)) {
    throw new AddressOutOfRangeError(`layer ${layer} not in memory`);
  }
  const tables: SubTable[] = [];
  for (let slot = 0; slot < image.slots; slot++) {
    for (let head = 0; head < image.heads; head++) {
      tables.push(...(image.tables.get(tableKey(layer, slot, head)) ?? []));
    }
  }
  return tables;
}

/** Gram strings -> the layer's memory vector, bit-equal to native retrieve. */
export function boundRetrieve(
  handle: BoundMemoryHandle,
  layer: number,
  grams: string[],
): Float32Array {
  const image = handle.require();
  if (grams.length !== image.slots) {
    throw new SlotMismatchError(`${grams.length} grams for ${image.slots} slots`);
  }
  const keys = grams.map((g) => encodeGram(normalize(g), image.maxWords));
  const tables = segmentTables(image, layer);
  const d = image.headWidth;
  const out = new Float32Array(tables.length * d);
  tables.forEach((table, j) => {
    const row = hashRow(keys[table.slot], table.multipliers, table.modulus);
    out.set(table.rows.subarray(row * d, (row + 1) * d), j * d);
  });
  return out;
}

/** row <- row - lr * delta in list order, float32 semantics throughout. */
export function boundApplyUpdates(
  handle: BoundMemoryHandle,
  updates: RowUpdate[],
  learningRate: number,
): void {
  const image = handle.require();
  const lr = fround(learningRate);
  const staged: { rows: Float32Array; base: number; delta: Float32Array }[] = [];
  for (const update of updates) {
    const group = image.tables.get(tableKey(update.layer, update.slot, update.head));
    if (!group || !image.layers.includes(update.layer)) {
      throw new AddressOutOfRangeError(
        `no (layer ${update.layer}, slot ${update.slot}, head ${update.head})`,
      );
    }
    const table = group[update.generation];
    if (!table) {
      throw new AddressOutOfRangeError(`generation ${update.generation} absent`);
    }
    if (update.row < 0 || BigInt(update.row) >= table.modulus) {
      throw new AddressOutOfRangeError(
        `row ${update.row} outside [0, ${table.modulus})`,
      );
    }
    if (update.delta.length !== image.headWidth) {
      throw new AddressOutOfRangeError(
        `delta width ${update.delta.length} != ${image.headWidth}`,
      );
    }
    const delta = Float32Array.from(update.delta, fround);
    if (delta.some((x) => !Number.isFinite(x))) {
      throw new AddressOutOfRangeError("non-finite update delta");
    }
    staged.push({ rows: table.rows, base: update.row * image.headWidth, delta });
  }
  for (const { rows, base, delta } of staged) {
    for (let i = 0; i < delta.length; i++) {
      rows[base + i] = fround(rows[base + i] - fround(lr * delta[i]));
    }
  }
}

/** Serialize the handle's current state in the native file format. */
export function saveMemory(handle: BoundMemoryHandle): Uint8Array {
  return serializeMemory(handle.require());
}

/** Width of one retrieved memory vector at a layer. */
export function memoryWidth(handle: BoundMemoryHandle, layer: number): number {
  const image = handle.require();
  return segmentTables(image, layer).length * image.headWidth;
}
