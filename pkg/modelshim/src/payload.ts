/**
 * Wire-format payload elements and their canonical text/key renderings.
 * The serializations here must stay byte-compatible with the toolkit side:
 * fixture keys are fnv1a64 over "T\x1f<text>" / "I\x1f<uri>" records joined
 * by "\x1e", and payload text joins text segments with newlines while
 * images render as "<image k>" tags.
 */

import { fnv1a64, hex16 } from "./hash.js";

export type WireElement =
  | { type: "text"; text: string }
  | { type: "image"; uri: string; sha256?: string; alt?: string };

export class PayloadError extends Error {}

export function validateElements(raw: unknown): WireElement[] {
  if (!Array.isArray(raw)) {
    throw new PayloadError("elements must be an array");
  }
  const out: WireElement[] = [];
  for (const el of raw) {
    if (typeof el !== "object" || el === null || !("type" in el)) {
      throw new PayloadError("element is not an object with a type");
    }
    const obj = el as Record<string, unknown>;
    if (obj.type === "text") {
      if (typeof obj.text !== "string" || obj.text.trim() === "") {
        throw new PayloadError("text element needs a non-empty text field");
      }
      out.push({ type: "text", text: obj.text });
    } else if (obj.type === "image") {
      if (typeof obj.uri !== "string" || obj.uri === "") {
        throw new PayloadError("image element needs a non-empty uri field");
      }
      out.push({ type: "image", uri: obj.uri });
    } else {
      throw new PayloadError(`unknown element type ${String(obj.type)}`);
    }
  }
  return out;
}

export function payloadText(elements: WireElement[]): string {
  const parts: string[] = [];
  let k = 0;
  for (const el of elements) {
    if (el.type === "text") {
      parts.push(el.text);
    } else {
      k += 1;
      parts.push(`<image ${k}>`);
    }
  }
  return parts.join("\n");
}

export function payloadKey(elements: WireElement[]): string {
  const parts = elements.map((el) =>
    el.type === "text" ? "T\x1f" + el.text : "I\x1f" + el.uri,
  );
  return hex16(fnv1a64(parts.join("\x1e")));
}
