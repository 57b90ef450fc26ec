"""Exception hierarchy shared by all keygram components."""


class KeygramError(Exception):
    """Base class for all errors raised by this package."""


# --- instruction parsing ---

class EmptyInstruction(KeygramError):
    """Normalization produced no words."""


class NoCandidates(KeygramError):
    """Extraction found no template match and no fallback bigram."""


class SchemaError(KeygramError):
    """External parse is not a JSON object with a 'keywords' string array."""


class BudgetError(KeygramError):
    """External parse keyword count does not equal the requested budget."""


class LengthError(KeygramError):
    """A keyword normalizes to zero words or to more words than allowed."""


# --- memory addressing / store ---

class UnknownLayer(KeygramError):
    """The memory has no tables for the requested layer."""


class UnknownSlot(KeygramError):
    """The requested slot index is outside the memory's slot budget."""


class SlotMismatch(KeygramError):
    """Number of keys passed to retrieve() differs from the slot budget."""


class AddressOutOfRange(KeygramError):
    """A row update addresses a nonexistent table or a row >= P."""


class MissingShard(KeygramError):
    """A shard required by the plan is absent from the sharded store."""


class IoError(KeygramError):
    """Underlying file I/O failed while reading or writing a memory file."""


class FormatError(KeygramError):
    """Memory file is truncated or carries a bad magic/version/field."""


class ChecksumError(KeygramError):
    """Memory file CRC32 does not match its contents."""


# --- fusion / training ---

class DimMismatch(KeygramError):
    """Tensor shapes passed to a fusion kernel do not conform."""


class DivergenceError(KeygramError):
    """Training loss became non-finite."""


class NoInsertedLayers(KeygramError):
    """Gate probing requires at least one inserted fusion layer."""


class ConfigError(KeygramError):
    """Configuration file is malformed or carries unknown fields."""
