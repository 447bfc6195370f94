"""Matryoshka-aware dense index: exact cosine top-k at any ladder dimension.

Scores are cosines of independently L2-normalized prefixes (the truncated
vector is renormalized before comparison, the only reading under which a
truncated cosine stays in [-1, 1]). The matrix is held and persisted in
float32; all score arithmetic runs in float64. Exact full scan is the
primary search path; coarse-to-fine is the documented speed path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .gateway import EmbeddingVector

DEFAULT_LADDER_DIMS = (2048, 1024, 512, 256)


class IndexError_(Exception):
    """Invalid index input, corrupt file, or a violated search precondition."""


@dataclass(frozen=True)
class DimensionLadder:
    dims: tuple[int, ...] = DEFAULT_LADDER_DIMS

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise IndexError_("ladder must be non-empty")
        if any(d < 1 for d in dims):
            raise IndexError_("ladder dims must be positive")
        if any(a <= b for a, b in zip(dims, dims[1:])):
            raise IndexError_(f"ladder dims must be strictly decreasing: {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def full_dim(self) -> int:
        return self.dims[0]

    def __contains__(self, dim: int) -> bool:
        return dim in self.dims


@dataclass(frozen=True)
class SearchHit:
    chunk_id: str
    score: float
    rank: int  # 1-based


class DenseIndex:
    """Immutable row-per-id matrix with cached per-ladder prefix norms."""

    def __init__(self, ids: list[str], matrix: np.ndarray, ladder: DimensionLadder):
        self.ids = list(ids)
        self.matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        self.matrix.setflags(write=False)
        self.ladder = ladder
        self._row_of = {cid: i for i, cid in enumerate(self.ids)}
        if len(self._row_of) != len(self.ids):
            raise IndexError_("duplicate ids in index")
        # score math runs in float64; cache the upcast matrix once (desk-scale
        # corpora make the 2x memory a fair trade for not converting per query)
        self._matrix64 = self.matrix.astype(np.float64)
        self._prefix_norms = {
            d: np.linalg.norm(self._matrix64[:, :d], axis=1) for d in ladder.dims
        }

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def full_dim(self) -> int:
        return int(self.matrix.shape[1])

    def prefix_norms(self, dim: int) -> np.ndarray:
        return self._prefix_norms[dim]


def build(embeddings: dict[str, EmbeddingVector], ladder: DimensionLadder | None = None) -> DenseIndex:
    """Index all entries in deterministic (ascending id) internal order."""
    ladder = ladder or DimensionLadder()
    if not embeddings:
        raise IndexError_("cannot build an index from an empty embedding map")
    ids = sorted(embeddings)
    full = ladder.full_dim
    rows = []
    for cid in ids:
        vec = embeddings[cid]
        values = vec.values if isinstance(vec, EmbeddingVector) else np.asarray(vec, dtype=np.float64)
        if values.shape != (full,):
            raise IndexError_(
                f"embedding {cid!r} has dimension {values.shape[0] if values.ndim == 1 else values.shape},"
                f" ladder requires {full}"
            )
        rows.append(values.astype(np.float32))
    return DenseIndex(ids, np.vstack(rows), ladder)


def _query_prefix(query: EmbeddingVector, dim: int) -> np.ndarray:
    q = np.asarray(query.values if isinstance(query, EmbeddingVector) else query, dtype=np.float64)
    if q.size < dim:
        raise IndexError_(f"query dimension {q.size} smaller than search dim {dim}")
    qp = q[:dim]
    qn = np.linalg.norm(qp)
    if qn == 0.0:
        raise IndexError_(f"query has an all-zero prefix at dim {dim}")
    return qp / qn


def _rank_hits(ids: list[str], scores: np.ndarray, k: int) -> list[SearchHit]:
    """Top-k by descending score; exact ties break by ascending chunk id."""
    # internal order is ascending id, so a stable sort on -score settles ties
    order = np.argsort(-scores, kind="stable")[:k]
    return [
        SearchHit(chunk_id=ids[int(row)], score=float(scores[int(row)]), rank=r + 1)
        for r, row in enumerate(order)
    ]


def search(ix: DenseIndex, query: EmbeddingVector, k: int, dim: int | None = None) -> list[SearchHit]:
    """Exact top-k cosine retrieval over length-dim prefixes (full scan)."""
    dim = ix.ladder.full_dim if dim is None else dim
    if dim not in ix.ladder:
        raise IndexError_(f"dim {dim} not in ladder {ix.ladder.dims}")
    if k < 1:
        raise IndexError_("k must be >= 1")
    qhat = _query_prefix(query, dim)
    norms = ix.prefix_norms(dim)
    if np.any(norms == 0.0):
        zero_id = ix.ids[int(np.argmax(norms == 0.0))]
        raise IndexError_(f"indexed vector {zero_id!r} has an all-zero prefix at dim {dim}")
    scores = (ix._matrix64[:, :dim] @ qhat) / norms
    return _rank_hits(ix.ids, scores, min(k, len(ix)))


def coarse_to_fine(ix: DenseIndex, query: EmbeddingVector, k: int, coarse_dim: int,
                   multiplier: int = 8) -> list[SearchHit]:
    """Two-stage search: m*k candidates at coarse_dim, reranked at full dimension.

    Returned scores are full-dimension scores; the result is always a subset
    of the stage-1 candidate pool, and equals exact search whenever m*k
    covers the whole index.
    """
    if coarse_dim >= ix.ladder.full_dim:
        raise IndexError_("coarse_dim must be strictly below the full dimension")
    if multiplier < 1:
        raise IndexError_("multiplier must be >= 1")
    candidates = search(ix, query, multiplier * k, coarse_dim)
    cand_rows = np.array([ix._row_of[h.chunk_id] for h in candidates], dtype=np.int64)

    full = ix.ladder.full_dim
    qhat = _query_prefix(query, full)
    norms = ix.prefix_norms(full)[cand_rows]
    if np.any(norms == 0.0):
        raise IndexError_("indexed vector has zero norm at full dimension")
    scores = (ix._matrix64[cand_rows] @ qhat) / norms
    cand_ids = [h.chunk_id for h in candidates]
    # rerank within the candidate pool only
    order = sorted(range(len(cand_ids)), key=lambda i: (-scores[i], cand_ids[i]))[:k]
    return [
        SearchHit(chunk_id=cand_ids[i], score=float(scores[i]), rank=r + 1)
        for r, i in enumerate(order)
    ]


def brute_force_oracle(vectors: dict[str, EmbeddingVector], query, k: int, dim: int) -> list[SearchHit]:
    """Naive per-id recomputation with no caches; the test oracle for search.

    Applies the same float32 storage quantization as the index so both paths
    score identical data, then recomputes every norm and dot product from
    scratch in float64 with plain loops. Tie-breaking is the same ascending-id
    rule.
    """
    if k < 1:
        raise IndexError_("k must be >= 1")
    q = np.asarray(query.values if isinstance(query, EmbeddingVector) else query, dtype=np.float64)
    qp = q[:dim]
    qn = float(np.sqrt(np.sum(qp * qp)))
    if qn == 0.0:
        raise IndexError_(f"query has an all-zero prefix at dim {dim}")
    qhat = qp / qn
    scored: list[tuple[float, str]] = []
    for cid in vectors:
        values = vectors[cid]
        arr = values.values if isinstance(values, EmbeddingVector) else np.asarray(values)
        stored = arr[:dim].astype(np.float32).astype(np.float64)
        norm = float(np.sqrt(np.sum(stored * stored)))
        if norm == 0.0:
            raise IndexError_(f"vector {cid!r} has an all-zero prefix at dim {dim}")
        scored.append((float(np.dot(stored, qhat)) / norm, cid))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [
        SearchHit(chunk_id=cid, score=score, rank=r + 1)
        for r, (score, cid) in enumerate(scored[: min(k, len(scored))])
    ]


def retriever_closure(ix: DenseIndex, embedder, instruction: str, dim: int | None = None):
    """Bind an index and a query embedder into a (elements, k) -> [chunk ids] closure."""

    def retrieve(elements, k: int) -> list[str]:
        query = embedder.embed([elements], role="query", instruction=instruction)[0]
        return [h.chunk_id for h in search(ix, query, k, dim)]

    return retrieve


# ---------------------------------------------------------------------------
# Binary persistence
#
# Index file:      magic "MRLX" | u32 version | u64 count | u32 full_dim |
#                  u8 ladder_len | u32 x ladder dims | ids block | f32 matrix
# Embeddings file: magic "MREB" | u32 version | u64 count | u32 dim |
#                  ids block | f32 matrix
# ids block: per id, u32 byte length + UTF-8 bytes. All integers LE.
# ---------------------------------------------------------------------------

INDEX_MAGIC = b"MRLX"
EMBED_MAGIC = b"MREB"
FORMAT_VERSION = 1


def _write_ids(f, ids: list[str]) -> None:
    for cid in ids:
        raw = cid.encode("utf-8")
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise IndexError_("truncated file")
    return data


def _read_ids(f, count: int) -> list[str]:
    ids = []
    for _ in range(count):
        (length,) = struct.unpack("<I", _read_exact(f, 4))
        ids.append(_read_exact(f, length).decode("utf-8"))
    return ids


def save(ix: DenseIndex, path: str) -> None:
    with open(path, "wb") as f:
        f.write(INDEX_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(ix.ids)))
        f.write(struct.pack("<I", ix.full_dim))
        f.write(struct.pack("<B", len(ix.ladder.dims)))
        for d in ix.ladder.dims:
            f.write(struct.pack("<I", d))
        _write_ids(f, ix.ids)
        f.write(np.ascontiguousarray(ix.matrix, dtype="<f4").tobytes())


def load(path: str) -> DenseIndex:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != INDEX_MAGIC:
            raise IndexError_(f"bad magic {magic!r}, expected {INDEX_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != FORMAT_VERSION:
            raise IndexError_(f"unsupported index version {version}")
        (count,) = struct.unpack("<Q", _read_exact(f, 8))
        (full_dim,) = struct.unpack("<I", _read_exact(f, 4))
        (ladder_len,) = struct.unpack("<B", _read_exact(f, 1))
        dims = struct.unpack(f"<{ladder_len}I", _read_exact(f, 4 * ladder_len))
        ids = _read_ids(f, count)
        raw = _read_exact(f, count * full_dim * 4)
        matrix = np.frombuffer(raw, dtype="<f4").reshape(count, full_dim)
    return DenseIndex(ids, matrix, DimensionLadder(dims))


def save_embeddings(path: str, embeddings: dict[str, EmbeddingVector]) -> None:
    """Persist an id -> vector map (ascending id order, float32 rows)."""
    if not embeddings:
        raise IndexError_("refusing to write an empty embeddings file")
    ids = sorted(embeddings)
    dims = {embeddings[c].dim for c in ids}
    if len(dims) != 1:
        raise IndexError_(f"mixed embedding dimensions {sorted(dims)}")
    (dim,) = dims
    with open(path, "wb") as f:
        f.write(EMBED_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(ids)))
        f.write(struct.pack("<I", dim))
        _write_ids(f, ids)
        for cid in ids:
            f.write(embeddings[cid].values.astype("<f4").tobytes())


def load_embeddings(path: str) -> dict[str, EmbeddingVector]:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != EMBED_MAGIC:
            raise IndexError_(f"bad magic {magic!r}, expected {EMBED_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != FORMAT_VERSION:
            raise IndexError_(f"unsupported embeddings version {version}")
        (count,) = struct.unpack("<Q", _read_exact(f, 8))
        (dim,) = struct.unpack("<I", _read_exact(f, 4))
        ids = _read_ids(f, count)
        out = {}
        for cid in ids:
            raw = _read_exact(f, dim * 4)
            out[cid] = EmbeddingVector(np.frombuffer(raw, dtype="<f4").astype(np.float64))
    return out
