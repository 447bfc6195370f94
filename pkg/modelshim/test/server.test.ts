import assert from "node:assert/strict";
import { readFileSync } from "node:fs";
import path from "node:path";
import test from "node:test";
import { fileURLToPath } from "node:url";

import { defaultConfig } from "../src/config.js";
import { startShim, Shim } from "../src/server.js";
import { WireElement } from "../src/payload.js";

const here = path.dirname(fileURLToPath(import.meta.url));
const GOLDEN_PATH = path.resolve(here, "../../../golden/embedding_golden.json");

interface GoldenCase {
  name: string;
  elements: WireElement[];
  role: "query" | "document";
  instruction: string | null;
  dim: number;
  embedding: number[];
}

const golden = JSON.parse(readFileSync(GOLDEN_PATH, "utf8")) as { cases: GoldenCase[] };
const GOLDEN_DIMS = [...new Set(golden.cases.map((c) => c.dim))];

async function withShim<T>(run: (base: string, shim: Shim) => Promise<T>,
                           fixtures: object = {}): Promise<T> {
  const config = defaultConfig();
  config.port = 0; // ephemeral
  config.allowedDims = [...new Set([...config.allowedDims, ...GOLDEN_DIMS])];
  config.fixtures = fixtures as typeof config.fixtures;
  const shim = await startShim(config);
  const addr = shim.server.address();
  if (typeof addr !== "object" || addr === null) throw new Error("no address");
  const base = `http://127.0.0.1:${addr.port}`;
  try {
    return await run(base, shim);
  } finally {
    await new Promise((resolve) => shim.server.close(resolve));
  }
}

async function post(base: string, route: string, body: unknown): Promise<{ status: number; json: any }> {
  const res = await fetch(base + route, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: typeof body === "string" ? body : JSON.stringify(body),
  });
  return { status: res.status, json: await res.json() };
}

test("healthz reports stub mode ready", async () => {
  await withShim(async (base) => {
    const res = await fetch(base + "/healthz");
    assert.equal(res.status, 200);
    assert.deepEqual(await res.json(), { mode: "stub", ready: true });
  });
});

test("embed endpoint reproduces the golden suite value-identically", async () => {
  await withShim(async (base) => {
    for (const c of golden.cases) {
      const { status, json } = await post(base, "/v1/embed", {
        role: c.role,
        instruction: c.instruction,
        dim: c.dim,
        items: [{ elements: c.elements }],
      });
      assert.equal(status, 200, c.name);
      assert.equal(json.dim, c.dim);
      assert.equal(json.embeddings.length, 1);
      const got = json.embeddings[0] as number[];
      assert.equal(got.length, c.embedding.length, c.name);
      for (let i = 0; i < got.length; i++) {
        assert.ok(Object.is(got[i], c.embedding[i]), `${c.name}: component ${i}`);
      }
    }
  });
});

test("embed preserves order and arity for batches", async () => {
  await withShim(async (base) => {
    const items = [0, 1, 2].map((i) => ({
      elements: [{ type: "text", text: `item number ${i}` }],
    }));
    const { status, json } = await post(base, "/v1/embed", {
      role: "document", instruction: null, dim: 256, items,
    });
    assert.equal(status, 200);
    assert.equal(json.embeddings.length, 3);
    for (let i = 0; i < 3; i++) {
      const single = await post(base, "/v1/embed", {
        role: "document", instruction: null, dim: 256, items: [items[i]],
      });
      assert.deepEqual(json.embeddings[i], single.json.embeddings[0]);
    }
  });
});

test("malformed requests return 400 with an error body", async () => {
  await withShim(async (base) => {
    const cases: Array<[string, unknown]> = [
      ["/v1/embed", "{not json"],
      ["/v1/embed", { role: "banana", dim: 256, items: [] }],
      ["/v1/embed", { role: "document", dim: 256, items: [] }],
      ["/v1/embed", { role: "query", instruction: null, dim: 256,
                      items: [{ elements: [{ type: "text", text: "q" }] }] }],
      ["/v1/embed", { role: "document", dim: 256, items: [{ elements: [{ type: "blob" }] }] }],
      ["/v1/generate", "]["],
      ["/v1/generate", { elements: [] }],
      ["/v1/generate", { elements: [{ type: "text", text: "x" }], max_tokens: -3 }],
    ];
    for (const [route, body] of cases) {
      const { status, json } = await post(base, route, body);
      assert.equal(status, 400, JSON.stringify(body));
      assert.equal(typeof json.error, "string");
      assert.ok(json.error.length > 0);
    }
  });
});

test("dim outside the configured ladder returns 422", async () => {
  await withShim(async (base) => {
    const { status, json } = await post(base, "/v1/embed", {
      role: "document", instruction: null, dim: 333,
      items: [{ elements: [{ type: "text", text: "x" }] }],
    });
    assert.equal(status, 422);
    assert.match(json.error, /ladder/);
  });
});

test("oversized batches are rejected", async () => {
  await withShim(async (base) => {
    const items = Array.from({ length: 33 }, (_, i) => ({
      elements: [{ type: "text", text: `item ${i}` }],
    }));
    const { status } = await post(base, "/v1/embed", {
      role: "document", instruction: null, dim: 256, items,
    });
    assert.equal(status, 400);
  });
});

test("generate replays fixtures with key and rule matching", async () => {
  const fixtures = {
    default: "UNKNOWN",
    rules: [{ contains: "ledger", text: "amber vault 007" }],
  };
  await withShim(async (base) => {
    const hit = await post(base, "/v1/generate", {
      elements: [{ type: "text", text: "what does the ledger record?" }],
      max_tokens: 64, temperature: 0, seed: 1,
    });
    assert.deepEqual(hit.json, { text: "amber vault 007", finish_reason: "stop" });
    const miss = await post(base, "/v1/generate", {
      elements: [{ type: "text", text: "unrelated" }],
      max_tokens: 64, temperature: 0, seed: 1,
    });
    assert.deepEqual(miss.json, { text: "UNKNOWN", finish_reason: "stop" });
  }, fixtures);
});

test("generate is deterministic across server restarts", async () => {
  const fixtures = { default: "steady", rules: [{ contains: "alpha", text: "ruled" }] };
  const body = {
    elements: [
      { type: "text", text: "alpha" },
      { type: "image", uri: "img://x.png" },
    ],
    max_tokens: 16, temperature: 0.7, seed: null,
  };
  const first = await withShim(async (base) => (await post(base, "/v1/generate", body)).json, fixtures);
  const second = await withShim(async (base) => (await post(base, "/v1/generate", body)).json, fixtures);
  assert.deepEqual(first, second);
  const embedBody = {
    role: "document", instruction: null, dim: 512,
    items: [{ elements: body.elements }],
  };
  const e1 = await withShim(async (base) => (await post(base, "/v1/embed", embedBody)).json, fixtures);
  const e2 = await withShim(async (base) => (await post(base, "/v1/embed", embedBody)).json, fixtures);
  assert.deepEqual(e1, e2);
});

test("unknown endpoints and methods are rejected", async () => {
  await withShim(async (base) => {
    const { status } = await post(base, "/v1/other", {});
    assert.equal(status, 400);
    const res = await fetch(base + "/v1/embed", { method: "PUT", body: "{}" });
    assert.equal(res.status, 400);
  });
});
