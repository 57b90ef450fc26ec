"""Key-gram conditional memory: parse, hash, retrieve, fuse, train."""

from .config import Config, load_config, parse_config
from .errors import KeygramError
from .fusion import (
    FusionLayer,
    create_fusion_layer,
    extend_projections,
    fuse,
    fusion_backward,
    fusion_forward,
    gate,
    project,
)
from .hashing import HashSpec, MemoryAddress, hash_key, make_hash_spec
from .memory import (
    LogicalMemory,
    RowUpdate,
    ShardPlan,
    SubTable,
    apply_updates,
    expand_capacity,
    expand_slots,
    init_memory,
    load,
    retrieve,
    retrieve_gram,
    retrieve_sharded,
    save,
    shard,
)
from .parser import (
    KeyGram,
    KeyGramSet,
    Lexicon,
    PaddedKey,
    encode,
    extract_from_instruction,
    extract_keygrams,
    normalize,
    serialize_keygrams,
    validate_external,
    word_id,
)

__version__ = "0.1.0"

__all__ = [
    "Config",
    "FusionLayer",
    "HashSpec",
    "KeyGram",
    "KeyGramSet",
    "KeygramError",
    "Lexicon",
    "LogicalMemory",
    "MemoryAddress",
    "PaddedKey",
    "RowUpdate",
    "ShardPlan",
    "SubTable",
    "apply_updates",
    "create_fusion_layer",
    "encode",
    "expand_capacity",
    "expand_slots",
    "extend_projections",
    "extract_from_instruction",
    "extract_keygrams",
    "fuse",
    "fusion_backward",
    "fusion_forward",
    "gate",
    "hash_key",
    "init_memory",
    "load",
    "load_config",
    "make_hash_spec",
    "normalize",
    "parse_config",
    "project",
    "retrieve",
    "retrieve_gram",
    "retrieve_sharded",
    "save",
    "serialize_keygrams",
    "shard",
    "validate_external",
    "word_id",
]
