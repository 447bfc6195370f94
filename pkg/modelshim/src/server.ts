/**
 * HTTP service speaking the embed/generate wire protocol.
 *
 *   POST /v1/embed    {"role","instruction","dim","items":[{"elements":[...]}]}
 *                     -> {"dim": n, "embeddings": [[...], ...]}
 *   POST /v1/generate {"elements":[...],"max_tokens","temperature","seed"}
 *                     -> {"text": str, "finish_reason": str}
 *   GET  /healthz     -> {"mode": str, "ready": bool}
 *
 * Errors: 400 malformed body, 422 dim outside the configured ladder,
 * 503 while a real model is loading, 504 on generation timeout. Stub mode
 * is fully deterministic and needs no model downloads; real mode validates
 * its adapter at startup and serializes model access behind a queue.
 */

import http from "node:http";
import { pathToFileURL } from "node:url";

import { parseArgs, ShimConfig } from "./config.js";
import { EmbedError, referenceEmbed } from "./embedder.js";
import { PayloadError, validateElements, WireElement } from "./payload.js";
import { Generated, ScriptedGenerator } from "./scripted.js";

interface RealAdapter {
  embed(items: WireElement[][], role: string, instruction: string | null, dim: number): Promise<number[][]>;
  generate(elements: WireElement[], params: { max_tokens: number; temperature: number; seed: number | null }): Promise<Generated>;
}

export interface Shim {
  server: http.Server;
  config: ShimConfig;
  ready(): boolean;
}

class HttpError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

function readBody(req: http.IncomingMessage, limit = 64 * 1024 * 1024): Promise<string> {
  return new Promise((resolve, reject) => {
    const chunks: Buffer[] = [];
    let size = 0;
    req.on("data", (chunk: Buffer) => {
      size += chunk.length;
      if (size > limit) {
        reject(new HttpError(400, "request body too large"));
        req.destroy();
        return;
      }
      chunks.push(chunk);
    });
    req.on("end", () => resolve(Buffer.concat(chunks).toString("utf8")));
    req.on("error", (err) => reject(err));
  });
}

function parseJson(body: string): Record<string, unknown> {
  let parsed: unknown;
  try {
    parsed = JSON.parse(body);
  } catch {
    throw new HttpError(400, "body is not valid JSON");
  }
  if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
    throw new HttpError(400, "body must be a JSON object");
  }
  return parsed as Record<string, unknown>;
}

export function createShim(config: ShimConfig): Shim {
  const scripted = new ScriptedGenerator(config.fixtures);
  let adapter: RealAdapter | null = null;
  let loading = config.mode === "real";

  if (config.mode === "real") {
    // validate availability at startup; the server answers 503 until then
    import(pathToFileURL(config.adapterPath!).href)
      .then((mod) => {
        const candidate = (mod.default ?? mod) as RealAdapter;
        if (typeof candidate.embed !== "function" || typeof candidate.generate !== "function") {
          throw new Error("adapter must export embed() and generate()");
        }
        adapter = candidate;
        loading = false;
      })
      .catch((err) => {
        console.error(`real-mode adapter failed to load: ${err}`);
        process.exitCode = 1;
        server.close();
      });
  }

  async function handleEmbed(body: Record<string, unknown>): Promise<unknown> {
    const role = body.role;
    if (role !== "query" && role !== "document") {
      throw new HttpError(400, `role must be "query" or "document"`);
    }
    const instruction = body.instruction ?? null;
    if (instruction !== null && typeof instruction !== "string") {
      throw new HttpError(400, "instruction must be a string or null");
    }
    if (role === "query" && !instruction) {
      throw new HttpError(400, "query embedding requires an instruction");
    }
    if (!Number.isInteger(body.dim)) {
      throw new HttpError(400, "dim must be an integer");
    }
    const dim = body.dim as number;
    if (!config.allowedDims.includes(dim)) {
      throw new HttpError(422, `dim ${dim} outside the configured ladder ${config.allowedDims}`);
    }
    if (!Array.isArray(body.items) || body.items.length === 0) {
      throw new HttpError(400, "items must be a non-empty array");
    }
    if (body.items.length > config.maxBatch) {
      throw new HttpError(400, `batch of ${body.items.length} exceeds max ${config.maxBatch}`);
    }
    const payloads: WireElement[][] = [];
    for (const item of body.items) {
      const obj = item as Record<string, unknown>;
      const elements = validateElements(obj?.elements);
      if (elements.length === 0) {
        throw new HttpError(400, "cannot embed an empty payload");
      }
      payloads.push(elements);
    }
    if (config.mode === "real") {
      if (loading || !adapter) throw new HttpError(503, "model is loading");
      const embeddings = await adapter.embed(payloads, role, instruction, dim);
      return { dim, embeddings };
    }
    const embeddings = payloads.map((p) => referenceEmbed(p, role, instruction, dim));
    return { dim, embeddings };
  }

  async function handleGenerate(body: Record<string, unknown>): Promise<unknown> {
    const elements = validateElements(body.elements);
    if (elements.length === 0) {
      throw new HttpError(400, "cannot generate from an empty payload");
    }
    const maxTokens = body.max_tokens === undefined ? 256 : body.max_tokens;
    if (!Number.isInteger(maxTokens) || (maxTokens as number) < 0) {
      throw new HttpError(400, "max_tokens must be a non-negative integer");
    }
    if (config.mode === "real") {
      if (loading || !adapter) throw new HttpError(503, "model is loading");
      const params = {
        max_tokens: maxTokens as number,
        temperature: typeof body.temperature === "number" ? body.temperature : 0.0,
        seed: typeof body.seed === "number" ? body.seed : null,
      };
      const result = await Promise.race([
        adapter.generate(elements, params),
        new Promise<never>((_, reject) =>
          setTimeout(() => reject(new HttpError(504, "generation timed out")), config.generateTimeoutMs),
        ),
      ]);
      return result;
    }
    return scripted.generate(elements, maxTokens as number);
  }

  const server = http.createServer((req, res) => {
    const respond = (status: number, payload: unknown) => {
      const text = JSON.stringify(payload);
      res.writeHead(status, { "Content-Type": "application/json" });
      res.end(text);
    };

    (async () => {
      if (req.method === "GET" && req.url === "/healthz") {
        respond(200, { mode: config.mode, ready: !loading });
        return;
      }
      if (req.method !== "POST") {
        throw new HttpError(400, `unsupported method ${req.method} for ${req.url}`);
      }
      const body = parseJson(await readBody(req));
      if (req.url === "/v1/embed") {
        respond(200, await handleEmbed(body));
      } else if (req.url === "/v1/generate") {
        respond(200, await handleGenerate(body));
      } else {
        throw new HttpError(400, `unknown endpoint ${req.url}`);
      }
    })().catch((err) => {
      if (err instanceof HttpError) {
        respond(err.status, { error: err.message });
      } else if (err instanceof PayloadError || err instanceof EmbedError) {
        respond(400, { error: err.message });
      } else {
        respond(500, { error: String(err) });
      }
    });
  });

  return { server, config, ready: () => !loading };
}

export function startShim(config: ShimConfig): Promise<Shim> {
  const shim = createShim(config);
  return new Promise((resolve, reject) => {
    shim.server.once("error", reject);
    shim.server.listen(config.port, config.host, () => resolve(shim));
  });
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href;

if (invokedDirectly) {
  const config = parseArgs(process.argv.slice(2));
  startShim(config)
    .then((shim) => {
      const addr = shim.server.address();
      const where = typeof addr === "object" && addr ? `${addr.address}:${addr.port}` : String(addr);
      console.log(`modelshim listening on ${where} (mode=${config.mode})`);
    })
    .catch((err) => {
      console.error(String(err));
      process.exit(1);
    });
}
