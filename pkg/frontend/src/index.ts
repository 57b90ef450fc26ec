export {
  BoundMemoryHandle,
  RowUpdate,
  boundApplyUpdates,
  boundExtract,
  boundRetrieve,
  closeMemory,
  memoryWidth,
  openMemory,
  runCli,
  saveMemory,
} from "./bindings.js";
export {
  AddressOutOfRangeError,
  ChecksumError,
  FormatError,
  KeygramBindingError,
  LifecycleError,
  NativeCliError,
  SlotMismatchError,
} from "./errors.js";
export { MemoryImage, SubTable, parseMemory, serializeMemory } from "./kgm.js";
export { encodeGram, normalize, wordId } from "./text.js";
export { hashRow } from "./hash.js";
export { crc32 } from "./crc32.js";
