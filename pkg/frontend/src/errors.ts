/** Error types mirroring the native library's failure modes. */

export class KeygramBindingError extends Error {}

/** Operation attempted on a handle after close(). */
export class LifecycleError extends KeygramBindingError {}

/** Memory file is truncated or structurally invalid. */
export class FormatError extends KeygramBindingError {}

/** Memory file CRC32 does not match its contents. */
export class ChecksumError extends KeygramBindingError {}

/** Gram count does not match the memory's slot budget. */
export class SlotMismatchError extends KeygramBindingError {}

/** A row update addresses a nonexistent table or a row >= P. */
export class AddressOutOfRangeError extends KeygramBindingError {}

/** The native CLI reported a failure. */
export class NativeCliError extends KeygramBindingError {}
