"""Uniform contracts for embedding and generation backends.

Three backends live here: a wire-protocol HTTP client, a deterministic
reference embedder used throughout the test suites, and a scripted
generator that replays programmed replies.

The reference embedder is a published algorithm, reproduced bit for bit by
the out-of-process stub service, so every constant below is part of its
contract:

  * text token t of payload element i  ->  bucket fnv1a64("{i}\\x1f" + t) mod dim,
    contribution +-1 with the sign taken from bit 63 of the same hash
  * ImageRef with uri u                ->  bucket fnv1a64(u) mod dim, contribution +-4
  * query instruction token t          ->  keyed with pseudo element index -1,
    contribution +-0.5
  * all-zero accumulation              ->  bucket 0 perturbed by +1
  * final vector L2-normalized; the squared norm is accumulated in ascending
    bucket order so the float64 arithmetic is reproducible elsewhere

All contributions are halves, so accumulation is exact in float64 and the
only rounding happens in the final sqrt and divisions.
"""

from __future__ import annotations

import json
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np

from .chunker import tokenize_text
from .core import Element, ImageRef, TextSegment, element_from_obj, element_to_obj
from .util import fnv1a64, ordered_parallel_map

FULL_DIM = 2048
DEFAULT_QUERY_INSTRUCTION = "Represent this question for retrieving relevant documents."

ROLE_QUERY = "query"
ROLE_DOCUMENT = "document"


class GatewayError(Exception):
    """Backend failure or a violated embed/generate contract."""


class EmbeddingVector:
    """Fixed-length vector of finite reals supporting prefix truncation.

    When a dimension ladder is supplied at creation, every ladder prefix is
    checked for a strictly positive norm; degenerate all-zero prefixes are
    rejected there rather than surfacing later as undefined cosines.
    """

    __slots__ = ("values",)

    def __init__(self, values, ladder=None):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise GatewayError("embedding must be a non-empty 1-d vector")
        if not np.all(np.isfinite(arr)):
            raise GatewayError("embedding contains non-finite values")
        arr = arr.copy()
        arr.setflags(write=False)
        self.values = arr
        if ladder is not None:
            for d in ladder.dims:
                if d > arr.size:
                    raise GatewayError(f"ladder dim {d} exceeds vector length {arr.size}")
                if not np.any(arr[:d]):
                    raise GatewayError(f"all-zero prefix at ladder dim {d}")

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def prefix(self, dim: int) -> np.ndarray:
        if dim < 1 or dim > self.values.size:
            raise GatewayError(f"prefix dim {dim} out of range 1..{self.values.size}")
        return self.values[:dim]

    def __eq__(self, other):
        return isinstance(other, EmbeddingVector) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"EmbeddingVector(dim={self.dim})"


@dataclass(frozen=True)
class GeneratorReply:
    text: str
    finish_reason: str = "stop"  # stop | length | error

    def __post_init__(self):
        if self.finish_reason not in ("stop", "length", "error"):
            raise GatewayError(f"unknown finish_reason {self.finish_reason!r}")
        if self.finish_reason != "error" and self.text is None:
            raise GatewayError("reply text required unless finish_reason is error")


def _sign(h: int) -> float:
    return -1.0 if (h >> 63) & 1 else 1.0


def reference_embed(elements, role: str, instruction: str | None, dim: int = FULL_DIM) -> EmbeddingVector:
    """Deterministic signed-feature-hash embedding of a mixed-modal payload.

    Pure function of (elements, role, instruction, dim); see the module
    docstring for the exact bucket/sign/weight contract.
    """
    if dim < 8:
        raise GatewayError("reference embedder requires dim >= 8")
    _check_role(role, instruction)
    acc: dict[int, float] = {}
    for i, el in enumerate(elements):
        if isinstance(el, TextSegment):
            for tok in tokenize_text(el.text):
                h = fnv1a64(f"{i}\x1f{tok}")
                acc[h % dim] = acc.get(h % dim, 0.0) + _sign(h) * 1.0
        elif isinstance(el, ImageRef):
            h = fnv1a64(el.uri)
            acc[h % dim] = acc.get(h % dim, 0.0) + _sign(h) * 4.0
        else:
            raise GatewayError(f"unsupported payload element {type(el).__name__}")
    if role == ROLE_QUERY:
        for tok in tokenize_text(instruction):
            h = fnv1a64(f"-1\x1f{tok}")
            acc[h % dim] = acc.get(h % dim, 0.0) + _sign(h) * 0.5

    if not any(acc.values()):
        acc[0] = acc.get(0, 0.0) + 1.0

    # ascending-bucket accumulation keeps the norm bit-reproducible
    norm_sq = 0.0
    for b in sorted(acc):
        norm_sq += acc[b] * acc[b]
    norm = norm_sq ** 0.5
    vec = np.zeros(dim, dtype=np.float64)
    for b, v in acc.items():
        vec[b] = v / norm
    return EmbeddingVector(vec)


def _check_role(role: str, instruction: str | None) -> None:
    if role not in (ROLE_QUERY, ROLE_DOCUMENT):
        raise GatewayError(f"unknown role {role!r}")
    if role == ROLE_QUERY and not instruction:
        raise GatewayError("query embedding requires an instruction string")


class ReferenceEmbedder:
    """In-process deterministic embedding backend (reentrant, stateless)."""

    def __init__(self, dim: int = FULL_DIM):
        self.dim = dim

    def embed(self, items, role: str, instruction: str | None = None) -> list[EmbeddingVector]:
        if not items:
            raise GatewayError("embed requires at least one item")
        _check_role(role, instruction)
        out = []
        for elements in items:
            if not list(elements):
                raise GatewayError("cannot embed an empty payload")
            out.append(reference_embed(elements, role, instruction, self.dim))
        return out


# ---------------------------------------------------------------------------
# Scripted generation
# ---------------------------------------------------------------------------


def payload_text(elements) -> str:
    """Plain-text rendering of a payload: text verbatim, images as <image k> tags."""
    parts = []
    k = 0
    for el in elements:
        if isinstance(el, TextSegment):
            parts.append(el.text)
        elif isinstance(el, ImageRef):
            k += 1
            parts.append(f"<image {k}>")
    return "\n".join(parts)


def payload_key(elements) -> str:
    """Stable fixture key: fnv1a64 over the canonical element serialization.

    Shared with the stub service; text elements serialize as "T\\x1f<text>",
    images as "I\\x1f<uri>", records joined by "\\x1e".
    """
    parts = []
    for el in elements:
        if isinstance(el, TextSegment):
            parts.append("T\x1f" + el.text)
        elif isinstance(el, ImageRef):
            parts.append("I\x1f" + el.uri)
        else:
            raise GatewayError(f"unsupported payload element {type(el).__name__}")
    return format(fnv1a64("\x1e".join(parts)), "016x")


class ScriptedGenerator:
    """Generator backend that replays programmed replies.

    Fixture format (also accepted as a JSON file by the CLI):

        {"default": "UNKNOWN",
         "by_key": {"<payload_key hex>": "reply text"},
         "rules": [{"contains": "substring", "text": "reply"},
                   {"contains_all": ["s1", "s2"], "text": "reply"},
                   {"contains": "substring", "error": "message"}]}

    Lookup order: exact payload key, then the first rule whose "contains"
    substring (or every "contains_all" substring) occurs in the payload
    text, then the default. A rule with "error" yields a
    finish_reason="error" reply, for exercising failure paths.
    """

    def __init__(self, fixtures: dict | None = None):
        fixtures = fixtures or {}
        self.default = fixtures.get("default", "UNKNOWN")
        self.by_key = dict(fixtures.get("by_key", {}))
        self.rules = list(fixtures.get("rules", []))
        self.calls: list[str] = []  # payload text per call, for replay checks

    @classmethod
    def from_file(cls, path: str) -> "ScriptedGenerator":
        with open(path, "r", encoding="utf-8") as f:
            return cls(json.load(f))

    def generate(self, elements, params: dict | None = None) -> GeneratorReply:
        if not list(elements):
            raise GatewayError("cannot generate from an empty payload")
        text = payload_text(elements)
        self.calls.append(text)
        key = payload_key(elements)
        if key in self.by_key:
            return GeneratorReply(text=self.by_key[key])
        for rule in self.rules:
            needles = rule.get("contains_all", [rule.get("contains", "")])
            if all(n in text for n in needles):
                if "error" in rule:
                    return GeneratorReply(text="", finish_reason="error")
                return GeneratorReply(text=rule["text"])
        return GeneratorReply(text=self.default)


# ---------------------------------------------------------------------------
# Wire-protocol client
# ---------------------------------------------------------------------------


class HTTPBackendClient:
    """Client for the embed/generate wire protocol.

    POST {base}/v1/embed     {"role","instruction","dim","items":[{"elements":[...]}]}
    POST {base}/v1/generate  {"elements":[...],"max_tokens","temperature","seed"}

    Requests are batched (default 32), each batch retried with exponential
    backoff; up to max_concurrency batches may be in flight at once and
    responses are reassembled in input order either way.
    """

    def __init__(self, base_url: str, dim: int = FULL_DIM, batch_size: int = 32,
                 attempts: int = 3, backoff: float = 0.1, timeout: float = 30.0,
                 max_concurrency: int = 1):
        self.base_url = base_url.rstrip("/")
        self.dim = dim
        self.batch_size = batch_size
        self.attempts = attempts
        self.backoff = backoff
        self.timeout = timeout
        self.max_concurrency = max(1, max_concurrency)

    def _post(self, path: str, body: dict) -> dict:
        url = self.base_url + path
        payload = json.dumps(body).encode("utf-8")
        last_error: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            req = urllib.request.Request(
                url, data=payload, headers={"Content-Type": "application/json"}
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except urllib.error.HTTPError as exc:
                detail = ""
                try:
                    detail = json.loads(exc.read().decode("utf-8")).get("error", "")
                except Exception:
                    pass
                raise GatewayError(f"{url} returned {exc.code}: {detail}") from exc
            except (urllib.error.URLError, TimeoutError, OSError) as exc:
                last_error = exc
        raise GatewayError(f"backend unreachable at {url}: {last_error}")

    def _embed_batch(self, batch, role: str, instruction: str | None) -> list[EmbeddingVector]:
        body = {
            "role": role,
            "instruction": instruction,
            "dim": self.dim,
            "items": [{"elements": [element_to_obj(e) for e in elements]} for elements in batch],
        }
        resp = self._post("/v1/embed", body)
        if resp.get("dim") != self.dim:
            raise GatewayError(f"backend returned dim {resp.get('dim')}, expected {self.dim}")
        embs = resp.get("embeddings", [])
        if len(embs) != len(batch):
            raise GatewayError(f"backend returned {len(embs)} embeddings for {len(batch)} items")
        return [EmbeddingVector(e) for e in embs]

    def embed(self, items, role: str, instruction: str | None = None) -> list[EmbeddingVector]:
        if not items:
            raise GatewayError("embed requires at least one item")
        _check_role(role, instruction)
        items = list(items)
        batches = [items[s : s + self.batch_size] for s in range(0, len(items), self.batch_size)]
        results = ordered_parallel_map(
            lambda batch: self._embed_batch(batch, role, instruction), batches,
            jobs=self.max_concurrency,
        )
        return [vec for batch in results for vec in batch]

    def generate(self, elements, params: dict | None = None) -> GeneratorReply:
        params = params or {}
        body = {
            "elements": [element_to_obj(e) for e in elements],
            "max_tokens": params.get("max_tokens", 256),
            "temperature": params.get("temperature", 0.0),
            "seed": params.get("seed"),
        }
        resp = self._post("/v1/generate", body)
        return GeneratorReply(text=resp.get("text", ""), finish_reason=resp.get("finish_reason", "stop"))


def payload_from_obj(obj) -> tuple[Element, ...]:
    """Decode {"elements": [...]} or a bare element list into a payload tuple."""
    if isinstance(obj, dict):
        obj = obj.get("elements", [])
    return tuple(element_from_obj(e) for e in obj)
