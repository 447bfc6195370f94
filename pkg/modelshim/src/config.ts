/** Shim configuration: stub mode needs no models; real mode must name an adapter. */

import { readFileSync } from "node:fs";
import { Fixtures } from "./scripted.js";

export interface ShimConfig {
  mode: "stub" | "real";
  host: string;
  port: number;
  /** dims accepted by /v1/embed; requests outside this ladder get 422 */
  allowedDims: number[];
  maxBatch: number;
  fixtures: Fixtures;
  /** real mode only: path of a module exporting { embed, generate } */
  adapterPath?: string;
  /** real mode only: generation wall-clock budget before a 504 */
  generateTimeoutMs: number;
}

export const DEFAULT_DIMS = [2048, 1024, 512, 256];

export function defaultConfig(): ShimConfig {
  return {
    mode: "stub",
    host: "127.0.0.1",
    port: 8091,
    allowedDims: [...DEFAULT_DIMS],
    maxBatch: 32,
    fixtures: {},
    generateTimeoutMs: 60_000,
  };
}

export function parseArgs(argv: string[]): ShimConfig {
  const cfg = defaultConfig();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    const next = () => {
      i += 1;
      if (i >= argv.length) throw new Error(`missing value for ${arg}`);
      return argv[i];
    };
    switch (arg) {
      case "--mode": {
        const mode = next();
        if (mode !== "stub" && mode !== "real") throw new Error(`unknown mode ${mode}`);
        cfg.mode = mode;
        break;
      }
      case "--host":
        cfg.host = next();
        break;
      case "--port":
        cfg.port = Number(next());
        break;
      case "--dims":
        cfg.allowedDims = next().split(",").map((d) => Number(d));
        break;
      case "--max-batch":
        cfg.maxBatch = Number(next());
        break;
      case "--fixtures":
        cfg.fixtures = JSON.parse(readFileSync(next(), "utf8")) as Fixtures;
        break;
      case "--adapter":
        cfg.adapterPath = next();
        break;
      case "--generate-timeout-ms":
        cfg.generateTimeoutMs = Number(next());
        break;
      default:
        throw new Error(`unknown argument ${arg}`);
    }
  }
  if (cfg.mode === "real" && !cfg.adapterPath) {
    throw new Error("real mode requires --adapter <module> naming the model adapter");
  }
  return cfg;
}
