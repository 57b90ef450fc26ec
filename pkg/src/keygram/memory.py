"""The logical memory: slot/head sub-tables with append-only generations.

Each configured layer holds an independent grid of S x H sub-tables
(V rows x d_h floats each), plus any appended capacity generations.
Retrieval walks a fixed canonical order -- slot-major, head-major,
generation-minor -- so a memory vector always concatenates the same way
no matter how the tables are physically partitioned.

Concurrency contract: any number of concurrent readers OR one exclusive
writer. Retrieval never mutates row data (the touched-row counter is a
diagnostics aid, not part of the data contract).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AddressOutOfRange,
    ChecksumError,
    FormatError,
    IoError,
    MissingShard,
    SlotMismatch,
    UnknownLayer,
    UnknownSlot,
)
from .hashing import HashSpec, MemoryAddress, hash_key, make_hash_spec, mix_seed
from .parser import DEFAULT_MAX_WORDS, PaddedKey

MAGIC = b"KGM1"
FORMAT_VERSION = 1

# Domain tag separating the row-init RNG stream from the multiplier stream.
_ROWS_DOMAIN = 0x526F7773


@dataclass
class SubTable:
    """One physical V x d_h embedding table owned by (slot, head, generation)."""

    layer: int
    slot: int
    head: int
    generation: int
    capacity: int
    width: int
    rows: np.ndarray
    spec: HashSpec

    def __post_init__(self) -> None:
        if self.rows.shape != (self.capacity, self.width):
            raise ValueError(f"rows shape {self.rows.shape} != ({self.capacity}, {self.width})")
        if self.rows.dtype != np.float32:
            raise ValueError(f"rows dtype {self.rows.dtype} != float32")
        if self.spec.modulus > self.capacity:
            raise ValueError("modulus exceeds capacity")


class LogicalMemory:
    """All sub-tables of all configured layers behind one lookup interface."""

    def __init__(
        self,
        layers: dict[int, dict[tuple[int, int], list[SubTable]]],
        slots: int,
        heads: int,
        head_width: int,
        capacity: int,
        max_words: int,
        seed: int,
    ):
        self.layers = layers
        self.slots = slots
        self.heads = heads
        self.head_width = head_width
        self.capacity = capacity
        self.max_words = max_words
        self.seed = seed
        self.rows_touched = 0  # diagnostics: rows fetched by retrieval

    def layer_indices(self) -> list[int]:
        return sorted(self.layers)

    def tables(self, layer: int, slot: int, head: int) -> list[SubTable]:
        if layer not in self.layers:
            raise UnknownLayer(f"layer {layer} not in memory (has {self.layer_indices()})")
        grid = self.layers[layer]
        if (slot, head) not in grid:
            raise UnknownSlot(f"slot {slot}, head {head} not in layer {layer}")
        return grid[(slot, head)]

    def iter_tables(self):
        """All sub-tables in canonical (layer, slot, head, generation) order."""
        for layer in self.layer_indices():
            grid = self.layers[layer]
            for slot in range(self.slots):
                for head in range(self.heads):
                    yield from grid[(slot, head)]

    def segment_labels(self, layer: int) -> list[tuple[int, int, int]]:
        """(slot, head, generation) of each d_h-wide segment of a memory vector."""
        if layer not in self.layers:
            raise UnknownLayer(f"layer {layer} not in memory")
        labels = []
        grid = self.layers[layer]
        for slot in range(self.slots):
            for head in range(self.heads):
                for table in grid[(slot, head)]:
                    labels.append((slot, head, table.generation))
        return labels

    def memory_width(self, layer: int) -> int:
        """d_m of one retrieved memory vector at this layer."""
        return len(self.segment_labels(layer)) * self.head_width


def _init_rows(seed: int, table_key: tuple[int, int, int, int], shape: tuple[int, int],
               scale: float) -> np.ndarray:
    rng = np.random.default_rng(mix_seed(seed, _ROWS_DOMAIN, *table_key))
    if scale == 0.0:
        return np.zeros(shape, dtype=np.float32)
    return rng.uniform(-scale, scale, shape).astype(np.float32)


def init_memory(
    layers: list[int],
    slots: int,
    heads: int,
    head_width: int,
    capacity: int,
    seed: int,
    init_scale: float = 0.02,
    max_words: int = DEFAULT_MAX_WORDS,
) -> LogicalMemory:
    """Create generation-0 sub-tables for every (layer, slot, head)."""
    if min(slots, heads, head_width, capacity) < 1:
        raise ValueError("all counts must be >= 1")
    if len(set(layers)) != len(layers):
        raise ValueError(f"duplicate layer indices in {layers}")
    grid_by_layer: dict[int, dict[tuple[int, int], list[SubTable]]] = {}
    for layer in layers:
        grid: dict[tuple[int, int], list[SubTable]] = {}
        for slot in range(slots):
            for head in range(heads):
                spec = make_hash_spec(layer, slot, head, max_words, capacity, seed)
                rows = _init_rows(seed, (layer, slot, head, 0), (capacity, head_width),
                                  init_scale)
                grid[(slot, head)] = [
                    SubTable(layer, slot, head, 0, capacity, head_width, rows, spec)
                ]
        grid_by_layer[layer] = grid
    return LogicalMemory(grid_by_layer, slots, heads, head_width, capacity, max_words, seed)


def retrieve_gram(key: PaddedKey, layer: int, slot: int, memory: LogicalMemory) -> np.ndarray:
    """One gram's retrieved vector: heads outer, generations inner."""
    if slot >= memory.slots or slot < 0:
        raise UnknownSlot(f"slot {slot} outside budget {memory.slots}")
    parts = []
    for head in range(memory.heads):
        for table in memory.tables(layer, slot, head):
            address = hash_key(key.ids, table.spec)
            parts.append(table.rows[address.row])
            memory.rows_touched += 1
    return np.concatenate(parts)


def retrieve(keys: list[PaddedKey], layer: int, memory: LogicalMemory) -> np.ndarray:
    """Memory vector for one instruction: gram i feeds slot i."""
    if len(keys) != memory.slots:
        raise SlotMismatch(f"{len(keys)} keys for {memory.slots} slots")
    return np.concatenate(
        [retrieve_gram(key, layer, slot, memory) for slot, key in enumerate(keys)]
    )


def addresses_for(keys: list[PaddedKey], layer: int, memory: LogicalMemory) -> list[MemoryAddress]:
    """The row addresses retrieve() would touch, in canonical segment order."""
    if len(keys) != memory.slots:
        raise SlotMismatch(f"{len(keys)} keys for {memory.slots} slots")
    out = []
    for slot, key in enumerate(keys):
        for head in range(memory.heads):
            for table in memory.tables(layer, slot, head):
                out.append(hash_key(key.ids, table.spec))
    return out


def expand_slots(memory: LogicalMemory, extra_slots: int) -> LogicalMemory:
    """Grow the slot budget; new sub-tables are zero so old outputs survive."""
    if extra_slots < 1:
        raise ValueError(f"extra_slots {extra_slots} < 1")
    old_slots = memory.slots
    for layer in memory.layer_indices():
        grid = memory.layers[layer]
        for slot in range(old_slots, old_slots + extra_slots):
            for head in range(memory.heads):
                spec = make_hash_spec(layer, slot, head, memory.max_words,
                                      memory.capacity, memory.seed)
                rows = np.zeros((memory.capacity, memory.head_width), dtype=np.float32)
                grid[(slot, head)] = [
                    SubTable(layer, slot, head, 0, memory.capacity,
                             memory.head_width, rows, spec)
                ]
    memory.slots = old_slots + extra_slots
    return memory


def expand_capacity(memory: LogicalMemory, slot: int, head: int) -> LogicalMemory:
    """Append a parallel generation to (slot, head) at every layer."""
    if slot >= memory.slots or head >= memory.heads or slot < 0 or head < 0:
        raise UnknownSlot(f"no (slot {slot}, head {head}) group")
    for layer in memory.layer_indices():
        tables = memory.layers[layer][(slot, head)]
        generation = len(tables)
        spec = make_hash_spec(layer, slot, head, memory.max_words, memory.capacity,
                              memory.seed, generation=generation)
        rows = np.zeros((memory.capacity, memory.head_width), dtype=np.float32)
        tables.append(SubTable(layer, slot, head, generation, memory.capacity,
                               memory.head_width, rows, spec))
    return memory


@dataclass(frozen=True)
class RowUpdate:
    """A gradient-style delta against one addressed row."""

    address: MemoryAddress
    delta: np.ndarray


def apply_updates(memory: LogicalMemory, updates: list[RowUpdate], learning_rate: float
                  ) -> LogicalMemory:
    """row <- row - lr * delta for addressed rows only, in list order."""
    lr = np.float32(learning_rate)
    # Bucket per table, preserving encounter order; same-table duplicates
    # accumulate sequentially, matching list-order semantics bit for bit.
    buckets: dict[tuple[int, int, int, int], tuple[SubTable, list[int], list[np.ndarray]]] = {}
    for update in updates:
        a = update.address
        try:
            tables = memory.tables(a.layer, a.slot, a.head)
        except (UnknownLayer, UnknownSlot) as e:
            raise AddressOutOfRange(str(e)) from e
        if a.generation >= len(tables):
            raise AddressOutOfRange(f"generation {a.generation} not in (slot {a.slot}, head {a.head})")
        table = tables[a.generation]
        if not 0 <= a.row < table.spec.modulus:
            raise AddressOutOfRange(f"row {a.row} outside [0, {table.spec.modulus})")
        delta = np.asarray(update.delta, dtype=np.float32)
        if delta.shape != (table.width,):
            raise ValueError(f"delta shape {delta.shape} != ({table.width},)")
        key = (a.layer, a.slot, a.head, a.generation)
        if key not in buckets:
            buckets[key] = (table, [], [])
        buckets[key][1].append(a.row)
        buckets[key][2].append(delta)
    staged = []
    for table, rows_idx, deltas in buckets.values():
        stacked = np.stack(deltas)
        if not np.all(np.isfinite(stacked)):
            raise ValueError("non-finite update delta")
        staged.append((table, np.asarray(rows_idx), stacked))
    for table, rows_idx, stacked in staged:
        np.subtract.at(table.rows, rows_idx, lr * stacked)
    return memory


# --- persistence -----------------------------------------------------------

def _pack_header(memory: LogicalMemory) -> bytes:
    layers = memory.layer_indices()
    parts = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        struct.pack("<Q", memory.seed),
        struct.pack("<I", len(layers)),
        struct.pack(f"<{len(layers)}I", *layers) if layers else b"",
        struct.pack("<III", memory.slots, memory.heads, memory.head_width),
    ]
    return b"".join(parts)


def _pack_table(table: SubTable) -> bytes:
    m = len(table.spec.multipliers)
    parts = [
        struct.pack("<IIIII", table.layer, table.slot, table.head,
                    table.generation, table.capacity),
        struct.pack("<Q", table.spec.modulus),
        struct.pack("<I", m),
        struct.pack(f"<{m}Q", *table.spec.multipliers),
        table.rows.astype("<f4", copy=False).tobytes(),
    ]
    return b"".join(parts)


def save(memory: LogicalMemory, path: str) -> None:
    """Write the memory file; byte layout is fixed by the format version."""
    payload = [_pack_header(memory)]
    payload.extend(_pack_table(t) for t in memory.iter_tables())
    blob = b"".join(payload)
    crc = zlib.crc32(blob) & 0xFFFFFFFF
    try:
        with open(path, "wb") as f:
            f.write(blob)
            f.write(struct.pack("<I", crc))
    except OSError as e:
        raise IoError(f"writing {path}: {e}") from e


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated file: wanted {n} bytes at offset {self.pos}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load(path: str) -> LogicalMemory:
    """Read a memory file back, verifying CRC and structural completeness."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoError(f"reading {path}: {e}") from e
    if len(raw) < len(MAGIC) + 4:
        raise FormatError("file shorter than magic + checksum")
    blob, crc_bytes = raw[:-4], raw[-4:]
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}")
    if struct.unpack("<I", crc_bytes)[0] != (zlib.crc32(blob) & 0xFFFFFFFF):
        raise ChecksumError("CRC32 mismatch")

    r = _Reader(blob)
    r.take(4)  # magic
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    seed = r.u64()
    layer_count = r.u32()
    layer_list = [r.u32() for _ in range(layer_count)]
    slots, heads, head_width = r.u32(), r.u32(), r.u32()

    grid_by_layer: dict[int, dict[tuple[int, int], list[SubTable]]] = {
        layer: {} for layer in layer_list
    }
    max_words = None
    capacity = None
    while r.pos < len(blob):
        layer, slot, head, generation, v = (r.u32(), r.u32(), r.u32(), r.u32(), r.u32())
        modulus = r.u64()
        m = r.u32()
        multipliers = tuple(struct.unpack(f"<{m}Q", r.take(8 * m)))
        rows = np.frombuffer(r.take(4 * v * head_width), dtype="<f4").reshape(
            v, head_width).copy()
        if max_words is None:
            max_words = m
        elif max_words != m:
            raise FormatError(f"mixed key lengths in file: {max_words} vs {m}")
        if capacity is None:
            capacity = v
        if layer not in grid_by_layer:
            raise FormatError(f"record for undeclared layer {layer}")
        spec = HashSpec(layer=layer, slot=slot, head=head, generation=generation,
                        multipliers=multipliers, modulus=modulus)
        table = SubTable(layer, slot, head, generation, v, head_width, rows, spec)
        grid_by_layer[layer].setdefault((slot, head), []).append(table)

    if max_words is None or capacity is None:
        raise FormatError("file holds no sub-table records")
    for layer, grid in grid_by_layer.items():
        for slot in range(slots):
            for head in range(heads):
                group = grid.get((slot, head))
                if not group:
                    raise FormatError(f"missing sub-table ({layer},{slot},{head})")
                if [t.generation for t in group] != list(range(len(group))):
                    raise FormatError(f"bad generation sequence at ({layer},{slot},{head})")
    return LogicalMemory(grid_by_layer, slots, heads, head_width, capacity,
                         max_words, seed)


# --- shard simulation -------------------------------------------------------

@dataclass(frozen=True)
class ShardPlan:
    """Round-robin (slot, head) -> shard assignment in slot-major order."""

    shard_count: int

    def __post_init__(self) -> None:
        if self.shard_count < 1:
            raise ValueError("shard_count < 1")

    def assign(self, slot: int, head: int, heads: int) -> int:
        return (slot * heads + head) % self.shard_count


@dataclass
class ShardedMemory:
    """A partition view: each shard holds only its assigned sub-tables."""

    plan: ShardPlan
    shards: list[dict[tuple[int, int, int], list[SubTable]]]
    slots: int
    heads: int
    head_width: int
    layer_list: list[int] = field(default_factory=list)


def shard(memory: LogicalMemory, plan: ShardPlan) -> ShardedMemory:
    """Partition the memory across plan.shard_count shards (views, not copies)."""
    shards: list[dict[tuple[int, int, int], list[SubTable]]] = [
        {} for _ in range(plan.shard_count)
    ]
    for layer in memory.layer_indices():
        for slot in range(memory.slots):
            for head in range(memory.heads):
                shard_id = plan.assign(slot, head, memory.heads)
                shards[shard_id][(layer, slot, head)] = memory.layers[layer][(slot, head)]
    return ShardedMemory(plan=plan, shards=shards, slots=memory.slots,
                         heads=memory.heads, head_width=memory.head_width,
                         layer_list=memory.layer_indices())


def retrieve_sharded(keys: list[PaddedKey], layer: int, store: ShardedMemory) -> np.ndarray:
    """Route lookups per (slot, head), gather, concatenate canonically.

    The gather order is fixed by the canonical slot/head/generation order,
    never by which shard answers first, so the result is bitwise equal to
    monolithic retrieval.
    """
    if len(keys) != store.slots:
        raise SlotMismatch(f"{len(keys)} keys for {store.slots} slots")
    parts = []
    for slot, key in enumerate(keys):
        for head in range(store.heads):
            shard_id = store.plan.assign(slot, head, store.heads)
            if shard_id >= len(store.shards):
                raise MissingShard(f"plan routes to absent shard {shard_id}")
            group = store.shards[shard_id].get((layer, slot, head))
            if group is None:
                raise MissingShard(f"shard {shard_id} lacks ({layer},{slot},{head})")
            for table in group:
                address = hash_key(key.ids, table.spec)
                parts.append(table.rows[address.row])
    return np.concatenate(parts)
