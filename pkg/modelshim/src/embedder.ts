/**
 * Stub embedding backend: signed feature hashing, bit-compatible with the
 * toolkit's in-process reference embedder.
 *
 * Contract (shared, do not change one side only):
 *   - text token t of payload element i -> bucket fnv1a64("{i}\x1f" + t) mod dim,
 *     contribution +-1 signed by bit 63 of the same hash
 *   - image uri u -> bucket fnv1a64(u) mod dim, contribution +-4
 *   - query instruction token t -> pseudo element index -1, contribution +-0.5
 *   - all-zero accumulation -> bucket 0 perturbed by +1
 *   - L2 normalization with the squared norm accumulated in ascending
 *     bucket order
 *
 * Every contribution is a multiple of 0.5, so accumulation is exact in
 * float64 and only the final sqrt and divisions round; both sides perform
 * those in IEEE double, which makes the outputs bit-identical.
 */

import { bucketOf, fnv1a64, signOf } from "./hash.js";
import { WireElement } from "./payload.js";

export class EmbedError extends Error {}

// letter/digit runs are tokens; every other non-whitespace symbol is its own
const TOKEN_RE = /[\p{L}\p{N}]+|\S/gu;

export function tokenize(text: string): string[] {
  return text.match(TOKEN_RE) ?? [];
}

export function referenceEmbed(
  elements: WireElement[],
  role: "query" | "document",
  instruction: string | null,
  dim: number,
): number[] {
  if (dim < 8) {
    throw new EmbedError("reference embedder requires dim >= 8");
  }
  if (role === "query" && !instruction) {
    throw new EmbedError("query embedding requires an instruction string");
  }
  const acc = new Map<number, number>();
  const add = (bucket: number, value: number) => {
    acc.set(bucket, (acc.get(bucket) ?? 0) + value);
  };
  elements.forEach((el, i) => {
    if (el.type === "text") {
      for (const tok of tokenize(el.text)) {
        const h = fnv1a64(`${i}\x1f${tok}`);
        add(bucketOf(h, dim), signOf(h) * 1.0);
      }
    } else {
      const h = fnv1a64(el.uri);
      add(bucketOf(h, dim), signOf(h) * 4.0);
    }
  });
  if (role === "query" && instruction) {
    for (const tok of tokenize(instruction)) {
      const h = fnv1a64(`-1\x1f${tok}`);
      add(bucketOf(h, dim), signOf(h) * 0.5);
    }
  }

  let allZero = true;
  for (const v of acc.values()) {
    if (v !== 0) {
      allZero = false;
      break;
    }
  }
  if (allZero) {
    add(0, 1.0);
  }

  let normSq = 0.0;
  for (const b of [...acc.keys()].sort((a, b2) => a - b2)) {
    const v = acc.get(b)!;
    normSq += v * v;
  }
  const norm = Math.sqrt(normSq);
  const vec = new Array<number>(dim).fill(0);
  for (const [b, v] of acc) {
    vec[b] = v / norm;
  }
  return vec;
}
