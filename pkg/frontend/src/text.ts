/** Word normalization and stateless word ids, matching the native rules:
 * lowercase, drop every character that is neither alphanumeric nor
 * whitespace, split on whitespace; ids are FNV-1a 64-bit over UTF-8
 * bytes with 0 remapped to 1.
 */

const U64 = (1n << 64n) - 1n;
const FNV_OFFSET = 0xcbf29ce484222325n;
const FNV_PRIME = 0x100000001b3n;

// \p{L}: letters, \p{N}: numbers -- the same classes Python's isalnum()
// accepts for the word charset used here.
const KEEP = /[\p{L}\p{N}]/u;
const SPACE = /\s/u;

export function normalize(instruction: string): string[] {
  const kept: string[] = [];
  for (const ch of instruction.toLowerCase()) {
    if (KEEP.test(ch)) {
      kept.push(ch);
    } else if (SPACE.test(ch)) {
      kept.push(" ");
    }
  }
  return kept.join("").split(/\s+/u).filter((w) => w.length > 0);
}

export function wordId(word: string): bigint {
  let h = FNV_OFFSET;
  for (const byte of new TextEncoder().encode(word)) {
    h ^= BigInt(byte);
    h = (h * FNV_PRIME) & U64;
  }
  return h === 0n ? 1n : h;
}

/** Encode one gram's words as a zero-padded id vector of maxWords. */
export function encodeGram(words: string[], maxWords: number): bigint[] {
  if (words.length === 0 || words.length > maxWords) {
    throw new Error(`gram has ${words.length} words, limit ${maxWords}`);
  }
  const ids = words.map(wordId);
  while (ids.length < maxWords) ids.push(0n);
  return ids;
}
