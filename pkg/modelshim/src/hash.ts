/**
 * Published 64-bit FNV-1a over UTF-8 bytes.
 *
 * This hash is part of the embedding/fixture contract shared with the
 * in-process reference embedder: identical bytes must hash identically
 * here and there, so there is no per-process randomization.
 */

const FNV64_OFFSET = 0xcbf29ce484222325n;
const FNV64_PRIME = 0x100000001b3n;
const MASK64 = 0xffffffffffffffffn;

export function fnv1a64(data: string | Uint8Array): bigint {
  const bytes = typeof data === "string" ? Buffer.from(data, "utf8") : data;
  let h = FNV64_OFFSET;
  for (const byte of bytes) {
    h ^= BigInt(byte);
    h = (h * FNV64_PRIME) & MASK64;
  }
  return h;
}

/** -1 when bit 63 is set, else +1. */
export function signOf(h: bigint): number {
  return (h >> 63n) & 1n ? -1.0 : 1.0;
}

export function bucketOf(h: bigint, dim: number): number {
  return Number(h % BigInt(dim));
}

export function hex16(h: bigint): string {
  return h.toString(16).padStart(16, "0");
}
