import random

import pytest
import sympy

from keygram.hashing import (
    HashSpec,
    hash_key,
    is_prime_u64,
    largest_prime_at_most,
    make_hash_spec,
    splitmix64,
)


def test_primality_against_sympy_oracle():
    for n in list(range(2, 500)) + [8191, 8192, 65521, 2**31 - 1, 2**61 - 1]:
        assert is_prime_u64(n) == sympy.isprime(n), n


def test_largest_prime_at_most_matches_sympy():
    for v in [3, 4, 10, 100, 8192, 4096, 1 << 20]:
        assert largest_prime_at_most(v) == sympy.prevprime(v + 1)


def test_default_capacity_gives_8191():
    spec = make_hash_spec(layer=0, slot=0, head=0, max_words=4, capacity=8192, seed=7)
    assert spec.modulus == 8191


def test_capacity_three_gives_three():
    spec = make_hash_spec(layer=0, slot=0, head=0, max_words=4, capacity=3, seed=7)
    assert spec.modulus == 3


def test_capacity_below_three_rejected():
    with pytest.raises(ValueError):
        make_hash_spec(layer=0, slot=0, head=0, max_words=4, capacity=2, seed=7)


def test_multipliers_forced_odd():
    for seed in range(20):
        spec = make_hash_spec(layer=1, slot=2, head=3, max_words=6, capacity=97, seed=seed)
        assert all(r & 1 for r in spec.multipliers)


def test_specs_differ_across_slots_heads_generations():
    seen = set()
    for slot in range(3):
        for head in range(3):
            for gen in range(2):
                spec = make_hash_spec(0, slot, head, 4, 8192, seed=11, generation=gen)
                seen.add(spec.multipliers)
    assert len(seen) == 18


def test_even_multiplier_rejected_by_spec_type():
    with pytest.raises(ValueError):
        HashSpec(layer=0, slot=0, head=0, generation=0, multipliers=(2, 3), modulus=7)


def test_nonprime_modulus_rejected_by_spec_type():
    with pytest.raises(ValueError):
        HashSpec(layer=0, slot=0, head=0, generation=0, multipliers=(3,), modulus=8192)


def test_hash_key_fixed_point_case():
    # (2*3) xor (5*7) = 6 xor 35 = 37; pads contribute nothing.
    spec = HashSpec(layer=0, slot=0, head=0, generation=0,
                    multipliers=(3, 7, 11, 13), modulus=8191)
    assert hash_key((2, 5, 0, 0), spec).row == 37


def test_hash_key_zero_key_is_zero_everywhere():
    for seed in range(10):
        spec = make_hash_spec(0, 0, 0, 4, 8192, seed=seed)
        assert hash_key((0, 0, 0, 0), spec).row == 0


def test_hash_key_wrapping_is_64_bit():
    spec = HashSpec(layer=0, slot=0, head=0, generation=0,
                    multipliers=(0xFFFFFFFFFFFFFFFF, 1), modulus=8191)
    # (2**64 - 1) * 3 wraps to 2**64 - 3 = 0xFFFF...FD
    assert hash_key((3, 0), spec).row == (2**64 - 3) % 8191


def test_hash_key_range_property():
    rnd = random.Random(1234)
    spec = make_hash_spec(1, 0, 2, 4, 8192, seed=99)
    for _ in range(2000):
        ids = tuple(rnd.getrandbits(64) | 1 for _ in range(4))
        row = hash_key(ids, spec).row
        assert 0 <= row < spec.modulus


def test_hash_key_deterministic_across_calls():
    spec = make_hash_spec(0, 3, 1, 4, 8192, seed=5)
    ids = (12345, 67890, 0, 0)
    rows = {hash_key(ids, spec).row for _ in range(10)}
    assert len(rows) == 1


def test_pad_neutrality_for_longer_keys():
    # A spec with more positions shares its multiplier prefix (same stream),
    # so extra zero padding never changes the row.
    short = make_hash_spec(2, 1, 0, 4, 8192, seed=42)
    long = make_hash_spec(2, 1, 0, 7, 8192, seed=42)
    assert long.multipliers[:4] == short.multipliers
    rnd = random.Random(7)
    for _ in range(200):
        words = tuple(rnd.getrandbits(64) | 1 for _ in range(rnd.randint(1, 4)))
        padded4 = words + (0,) * (4 - len(words))
        padded7 = words + (0,) * (7 - len(words))
        assert hash_key(padded4, short).row == hash_key(padded7, long).row


def test_single_word_perturbation_changes_row():
    rnd = random.Random(2024)
    spec = make_hash_spec(0, 0, 0, 4, 8192, seed=17)
    changed = 0
    trials = 10_000
    for _ in range(trials):
        ids = [rnd.getrandbits(64) | 1 for _ in range(4)]
        before = hash_key(tuple(ids), spec).row
        pos = rnd.randrange(4)
        new = rnd.getrandbits(64) | 1
        while new == ids[pos]:
            new = rnd.getrandbits(64) | 1
        ids[pos] = new
        if hash_key(tuple(ids), spec).row != before:
            changed += 1
    assert changed / trials >= 0.99


def test_key_length_must_match_spec():
    spec = make_hash_spec(0, 0, 0, 4, 8192, seed=3)
    with pytest.raises(ValueError):
        hash_key((1, 2, 3), spec)


def test_splitmix64_reference_values():
    # First outputs for seed 0 of the standard SplitMix64 sequence.
    state, first = splitmix64(0)
    _, second = splitmix64(state)
    assert first == 0xE220A8397B1DCDAF
    assert second == 0x6E789E6AA1B965F4
