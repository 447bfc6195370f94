"""Shared low-level helpers: the published 64-bit hash, canonical JSON, parallel map."""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
from typing import Any, Callable, Iterable, Sequence

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes | str) -> int:
    """64-bit FNV-1a over UTF-8 bytes.

    This hash is a published part of the embedding/fixture contracts: other
    components (including out-of-process stubs) reproduce it bit for bit, so
    it must never be swapped for a per-process randomized hash.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def stable_seed(*parts: Any) -> int:
    """Derive a 64-bit seed from arbitrary parts, stable across runs and platforms."""
    return fnv1a64("\x1f".join(str(p) for p in parts))


def canonical_json_line(obj: Any) -> str:
    """One JSONL line in the canonical wire form: compact separators, UTF-8, LF."""
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n"


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def ordered_parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Apply fn to items, optionally across threads; results keep input order."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def read_jsonl(path: str) -> Iterable[tuple[int, Any]]:
    """Yield (line_number, parsed_object) for every non-blank line; parse errors raise."""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            yield lineno, json.loads(line)
