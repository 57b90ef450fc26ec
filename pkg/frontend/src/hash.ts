/** Multiplicative-XOR row addressing over persisted hash parameters.
 * All arithmetic is 64-bit wrapping, matching the native addresser.
 */

const U64 = (1n << 64n) - 1n;

export function hashRow(ids: bigint[], multipliers: bigint[], modulus: bigint): number {
  if (ids.length !== multipliers.length) {
    throw new Error(`key has ${ids.length} positions, spec expects ${multipliers.length}`);
  }
  let acc = 0n;
  for (let i = 0; i < ids.length; i++) {
    acc ^= (ids[i] * multipliers[i]) & U64;
  }
  return Number(acc % modulus);
}
