/**
 * Scripted generation: deterministic fixture lookup, same format and
 * precedence as the toolkit's in-process scripted generator. Lookup order:
 * exact payload key, first matching rule (single "contains" substring or
 * every "contains_all" substring), then the default reply.
 */

import { payloadKey, payloadText, WireElement } from "./payload.js";

export interface FixtureRule {
  contains?: string;
  contains_all?: string[];
  text?: string;
  error?: string;
}

export interface Fixtures {
  default?: string;
  by_key?: Record<string, string>;
  rules?: FixtureRule[];
}

export interface Generated {
  text: string;
  finish_reason: "stop" | "length" | "error";
}

export class ScriptedGenerator {
  private readonly fallback: string;
  private readonly byKey: Record<string, string>;
  private readonly rules: FixtureRule[];

  constructor(fixtures: Fixtures = {}) {
    this.fallback = fixtures.default ?? "UNKNOWN";
    this.byKey = fixtures.by_key ?? {};
    this.rules = fixtures.rules ?? [];
  }

  generate(elements: WireElement[], maxTokens?: number): Generated {
    const key = payloadKey(elements);
    if (key in this.byKey) {
      return this.truncate(this.byKey[key], maxTokens);
    }
    const text = payloadText(elements);
    for (const rule of this.rules) {
      const needles = rule.contains_all ?? [rule.contains ?? ""];
      if (needles.every((n) => text.includes(n))) {
        if (rule.error !== undefined) {
          return { text: "", finish_reason: "error" };
        }
        return this.truncate(rule.text ?? "", maxTokens);
      }
    }
    return this.truncate(this.fallback, maxTokens);
  }

  private truncate(text: string, maxTokens?: number): Generated {
    if (maxTokens !== undefined && maxTokens >= 0) {
      const words = text.split(/\s+/).filter((w) => w.length);
      if (words.length > maxTokens) {
        return { text: words.slice(0, maxTokens).join(" "), finish_reason: "length" };
      }
    }
    return { text, finish_reason: "stop" };
  }
}
