"""Deterministic multiplicative-XOR addressing for padded keys.

Every (layer, slot, head, generation) owns a HashSpec: M odd 64-bit
multipliers plus a prime modulus. A padded key hashes to a row index by
XOR-ing the wrapping 64-bit products of word ids and multipliers, then
reducing modulo the prime. All arithmetic is fixed at 64-bit wrapping
semantics so the same spec yields the same row on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass

U64_MASK = 0xFFFFFFFFFFFFFFFF

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15

# Deterministic Miller-Rabin witness set, sufficient for all n < 2^64.
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 stream; returns (next_state, output)."""
    state = (state + _SPLITMIX_GAMMA) & U64_MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & U64_MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & U64_MASK
    z = z ^ (z >> 31)
    return state, z


def mix_seed(seed: int, *values: int) -> int:
    """Fold integers into a 64-bit seed, one SplitMix64 step per value."""
    state = seed & U64_MASK
    for v in values:
        state, out = splitmix64(state ^ (v & U64_MASK))
        state = out
    return state


def is_prime_u64(n: int) -> bool:
    """Deterministic Miller-Rabin primality test for n < 2^64."""
    if n < 2:
        return False
    for p in _MR_BASES:
        if n == p:
            return True
        if n % p == 0:
            return False
    d = n - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = (x * x) % n
            if x == n - 1:
                break
        else:
            return False
    return True


def largest_prime_at_most(n: int) -> int:
    """Largest prime <= n. Requires n >= 2."""
    if n < 2:
        raise ValueError(f"no prime <= {n}")
    candidate = n
    while not is_prime_u64(candidate):
        candidate -= 1
    return candidate


@dataclass(frozen=True)
class HashSpec:
    """Persisted addressing parameters for one (layer, slot, head, generation).

    multipliers are odd 64-bit integers, one per key position; modulus is
    the prime table size. Immutable: lookup determinism depends only on
    the persisted values, never on how they were generated.
    """

    layer: int
    slot: int
    head: int
    generation: int
    multipliers: tuple[int, ...]
    modulus: int

    def __post_init__(self) -> None:
        for r in self.multipliers:
            if r % 2 == 0:
                raise ValueError(f"multiplier {r} is even")
        if not is_prime_u64(self.modulus):
            raise ValueError(f"modulus {self.modulus} is not prime")


@dataclass(frozen=True)
class MemoryAddress:
    """A single addressed row inside one sub-table."""

    layer: int
    slot: int
    head: int
    generation: int
    row: int


def make_hash_spec(
    layer: int,
    slot: int,
    head: int,
    max_words: int,
    capacity: int,
    seed: int,
    generation: int = 0,
) -> HashSpec:
    """Derive a HashSpec for one sub-table.

    The modulus is the largest prime <= capacity; multipliers come from a
    SplitMix64 stream keyed on (seed, layer, slot, head, generation) and
    are forced odd by setting the low bit. Specs are persisted with the
    memory file, so this derivation only matters at creation time.
    """
    if capacity < 3:
        raise ValueError(f"capacity {capacity} < 3")
    modulus = largest_prime_at_most(capacity)
    state = mix_seed(seed, layer, slot, head, generation)
    multipliers = []
    for _ in range(max_words):
        state, out = splitmix64(state)
        multipliers.append(out | 1)
    return HashSpec(
        layer=layer,
        slot=slot,
        head=head,
        generation=generation,
        multipliers=tuple(multipliers),
        modulus=modulus,
    )


def hash_key(ids: tuple[int, ...], spec: HashSpec) -> MemoryAddress:
    """Map a padded key to a row: XOR of wrapping products, mod the prime.

    Pad positions carry id 0 and contribute the XOR identity, so extra
    trailing zeros never change the row.
    """
    if len(ids) != len(spec.multipliers):
        raise ValueError(
            f"key has {len(ids)} positions, spec expects {len(spec.multipliers)}"
        )
    acc = 0
    for a, r in zip(ids, spec.multipliers):
        acc ^= (a * r) & U64_MASK
    return MemoryAddress(
        layer=spec.layer,
        slot=spec.slot,
        head=spec.head,
        generation=spec.generation,
        row=acc % spec.modulus,
    )
