"""Multi-resolution contrastive objective, analytic gradients, and a trainer.

The loss is a weighted sum of InfoNCE terms, one per ladder dimension,
each computed on cosine similarities of renormalized embedding prefixes:

    L = sum_k w_k * L_k,   sum_k w_k = 1
    L_k = -log( phi(q, pos) / (phi(q, pos) + sum_n phi(q, neg_n)) )
    phi(a, b) = exp(cos(a[:d_k], b[:d_k]) / tau)

All loss math runs in double precision with a log-sum-exp shift: at the
default tau = 0.02 the exponents reach +-100, which would overflow single
precision. The trainable unit is a linear projection head on top of frozen
base features; the head is optimized with plain mini-batch gradient
descent using the exact analytic gradient of the objective above.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .gateway import EmbeddingVector, payload_from_obj
from .index import DimensionLadder
from .util import canonical_json_line
from .core import element_to_obj

DEFAULT_TEMPERATURE = 0.02
DEFAULT_RAW_WEIGHTS = (1.0, 1.0, 0.2, 0.2)


class ContrastiveError(Exception):
    pass


@dataclass(frozen=True)
class LossConfig:
    """Temperature, dimension ladder, and per-dimension weights.

    Weights are accepted raw (as reported, before normalization) and
    normalized internally so they sum to one; both forms are kept so run
    manifests can log them side by side.
    """

    temperature: float = DEFAULT_TEMPERATURE
    ladder: DimensionLadder = field(default_factory=DimensionLadder)
    raw_weights: tuple[float, ...] = DEFAULT_RAW_WEIGHTS

    def __post_init__(self):
        if self.temperature <= 0:
            raise ContrastiveError("temperature must be positive")
        raw = tuple(float(w) for w in self.raw_weights)
        if len(raw) != len(self.ladder.dims):
            raise ContrastiveError(
                f"{len(raw)} weights for {len(self.ladder.dims)} ladder dims"
            )
        if any(w <= 0 for w in raw):
            raise ContrastiveError("raw weights must be positive")
        object.__setattr__(self, "raw_weights", raw)

    @property
    def normalized_weights(self) -> tuple[float, ...]:
        total = sum(self.raw_weights)
        return tuple(w / total for w in self.raw_weights)


@dataclass(frozen=True)
class ContrastiveTriplet:
    query_elements: tuple
    instruction: str
    positive_id: str
    negative_ids: tuple[str, ...]

    def __post_init__(self):
        negs = tuple(self.negative_ids)
        if not negs:
            raise ContrastiveError("triplet needs at least one negative")
        if len(set(negs)) != len(negs):
            raise ContrastiveError("negative ids must be distinct")
        if self.positive_id in negs:
            raise ContrastiveError("positive id found among negatives")
        object.__setattr__(self, "negative_ids", negs)
        object.__setattr__(self, "query_elements", tuple(self.query_elements))


def _as_array(vec) -> np.ndarray:
    if isinstance(vec, EmbeddingVector):
        return vec.values
    return np.asarray(vec, dtype=np.float64)


def prefix_similarity(a, b, dim: int) -> float:
    """Cosine of the renormalized length-dim prefixes; symmetric, in [-1, 1]."""
    av = _as_array(a)
    bv = _as_array(b)
    if dim < 1 or dim > av.size or dim > bv.size:
        raise ContrastiveError(f"dim {dim} out of range for vectors ({av.size}, {bv.size})")
    ap = av[:dim]
    bp = bv[:dim]
    na = float(np.linalg.norm(ap))
    nb = float(np.linalg.norm(bp))
    if na == 0.0 or nb == 0.0:
        raise ContrastiveError(f"zero-norm prefix at dim {dim}")
    return float(np.dot(ap, bp) / (na * nb))


def _infonce_from_sims(pos_sim: float, neg_sims: np.ndarray, tau: float) -> float:
    # loss = log(1 + sum_n exp((s_n - s_pos)/tau)), shifted so nothing overflows
    s = (neg_sims - pos_sim) / tau
    m = max(0.0, float(np.max(s)))
    if m == 0.0:
        return float(np.log1p(np.sum(np.exp(s))))
    return m + float(np.log(np.exp(-m) + np.sum(np.exp(s - m))))


def infonce_at_dim(query, positive, negatives, dim: int, tau: float = DEFAULT_TEMPERATURE) -> float:
    """Single-dimension InfoNCE on renormalized prefixes; always >= 0."""
    if tau <= 0:
        raise ContrastiveError("temperature must be positive")
    negatives = list(negatives)
    if not negatives:
        raise ContrastiveError("InfoNCE requires at least one negative")
    pos_sim = prefix_similarity(query, positive, dim)
    neg_sims = np.array([prefix_similarity(query, n, dim) for n in negatives])
    return _infonce_from_sims(pos_sim, neg_sims, tau)


def mrl_loss(query, positive, negatives, cfg: LossConfig | None = None) -> float:
    """Normalized-weighted sum of per-ladder-dimension InfoNCE losses."""
    cfg = cfg or LossConfig()
    weights = cfg.normalized_weights
    total = 0.0
    for w, d in zip(weights, cfg.ladder.dims):
        total += w * infonce_at_dim(query, positive, negatives, d, cfg.temperature)
    return total


# ---------------------------------------------------------------------------
# Projection head and analytic gradient
# ---------------------------------------------------------------------------


class ProjectionHead:
    """Linear map from frozen base features to the retrieval embedding space.

    project(b) = L2-normalize(W @ b). Similarities at a ladder dimension d
    use the renormalized prefix of W @ b, so the full-vector normalization
    cancels and the loss is invariant to positive rescaling of W.
    """

    def __init__(self, weight: np.ndarray):
        W = np.asarray(weight, dtype=np.float64)
        if W.ndim != 2:
            raise ContrastiveError("head weight must be a 2-d matrix")
        if not np.all(np.isfinite(W)):
            raise ContrastiveError("head weight contains non-finite values")
        self.weight = W

    @classmethod
    def init_random(cls, d_out: int, d_in: int, seed: int = 0) -> "ProjectionHead":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in)))

    @property
    def d_out(self) -> int:
        return int(self.weight.shape[0])

    @property
    def d_in(self) -> int:
        return int(self.weight.shape[1])

    def raw_project(self, base) -> np.ndarray:
        return self.weight @ np.asarray(base, dtype=np.float64)

    def project(self, base) -> EmbeddingVector:
        z = self.raw_project(base)
        norm = float(np.linalg.norm(z))
        if norm == 0.0:
            raise ContrastiveError("degenerate zero projection")
        return EmbeddingVector(z / norm)


def _softmax_rows(pos_sim: float, neg_sims: np.ndarray, tau: float) -> np.ndarray:
    logits = np.concatenate(([pos_sim], neg_sims)) / tau
    logits -= np.max(logits)
    e = np.exp(logits)
    return e / np.sum(e)


def mrl_loss_and_gradient(head: ProjectionHead, query_base, positive_base, negative_bases,
                          cfg: LossConfig | None = None) -> tuple[float, np.ndarray]:
    """Loss value and dL/dW for one triplet of base features.

    Derivation: with z_x = W b_x and prefixes u = z_q[:d], v = z_x[:d],

        d cos / d u = (v_hat - cos * u_hat) / |u|
        d cos / d v = (u_hat - cos * v_hat) / |v|
        d L_d / d cos_x = (p_x - [x is positive]) / tau

    and each prefix gradient back-propagates through the first d rows of W
    as an outer product with the corresponding base feature. Everything is
    accumulated over ladder dimensions with the normalized weights.
    """
    cfg = cfg or LossConfig()
    tau = cfg.temperature
    W = head.weight
    bq = np.asarray(query_base, dtype=np.float64)
    bases = [np.asarray(positive_base, dtype=np.float64)] + [
        np.asarray(nb, dtype=np.float64) for nb in negative_bases
    ]
    if len(bases) < 2:
        raise ContrastiveError("triplet needs at least one negative")

    zq = W @ bq
    Z = np.stack([W @ b for b in bases])  # rows: positive, then negatives
    B = np.stack(bases)

    grad = np.zeros_like(W)
    loss = 0.0
    for w, d in zip(cfg.normalized_weights, cfg.ladder.dims):
        if d > W.shape[0]:
            raise ContrastiveError(f"ladder dim {d} exceeds head output dim {W.shape[0]}")
        u = zq[:d]
        nu = float(np.linalg.norm(u))
        if nu == 0.0:
            raise ContrastiveError(f"degenerate zero query projection at dim {d}")
        uhat = u / nu
        V = Z[:, :d]
        nv = np.linalg.norm(V, axis=1)
        if np.any(nv == 0.0):
            raise ContrastiveError(f"degenerate zero candidate projection at dim {d}")
        Vhat = V / nv[:, None]
        cos = Vhat @ uhat

        p = _softmax_rows(cos[0], cos[1:], tau)
        loss += w * _infonce_from_sims(float(cos[0]), cos[1:], tau)

        delta = p.copy()
        delta[0] -= 1.0
        coeff = w * delta / tau  # dL/dcos_x, weighted

        # query side: sum_x coeff_x * (vhat_x - cos_x uhat) / nu, one outer with bq
        du = (Vhat - cos[:, None] * uhat[None, :]).T @ coeff / nu
        grad[:d, :] += np.outer(du, bq)

        # candidate side: coeff_x * (uhat - cos_x vhat_x) / nv_x, outer with b_x each
        Gv = (coeff / nv)[:, None] * (uhat[None, :] - cos[:, None] * Vhat)
        grad[:d, :] += Gv.T @ B
    return loss, grad


def mrl_loss_gradient(head: ProjectionHead, query_base, positive_base, negative_bases,
                      cfg: LossConfig | None = None) -> np.ndarray:
    _, grad = mrl_loss_and_gradient(head, query_base, positive_base, negative_bases, cfg)
    return grad


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ContrastiveError("learning rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContrastiveError("epochs and batch size must be positive")


def train_head(triplets, query_features, chunk_features, cfg: LossConfig | None = None,
               opt: TrainConfig | None = None,
               initial: ProjectionHead | None = None) -> tuple[ProjectionHead, list[dict]]:
    """Mini-batch gradient descent on the projection head.

    query_features maps a triplet to its base feature vector; chunk_features
    maps a chunk id to its base feature vector. Batch gradients are averaged
    in input order, so a run is fully determined by (triplets, features,
    seeds). Returns the trained head and the per-epoch training log
    [{"epoch": int, "mean_loss": float}, ...].
    """
    cfg = cfg or LossConfig()
    opt = opt or TrainConfig()
    triplets = list(triplets)
    if not triplets:
        raise ContrastiveError("training requires at least one triplet")

    feats_q = [np.asarray(query_features(t), dtype=np.float64) for t in triplets]
    feats_pos = [np.asarray(chunk_features(t.positive_id), dtype=np.float64) for t in triplets]
    feats_neg = [
        [np.asarray(chunk_features(n), dtype=np.float64) for n in t.negative_ids] for t in triplets
    ]

    d_in = feats_q[0].size
    head = initial or ProjectionHead.init_random(cfg.ladder.full_dim, d_in, seed=opt.seed)
    W = head.weight.copy()

    rng = np.random.default_rng(opt.seed)
    log: list[dict] = []
    n = len(triplets)
    for epoch in range(opt.epochs):
        order = rng.permutation(n) if opt.shuffle else np.arange(n)
        losses = []
        for start in range(0, n, opt.batch_size):
            batch = order[start : start + opt.batch_size]
            grad = np.zeros_like(W)
            for idx in batch:
                l, g = mrl_loss_and_gradient(
                    ProjectionHead(W), feats_q[idx], feats_pos[idx], feats_neg[idx], cfg
                )
                losses.append(l)
                grad += g
            W = W - opt.learning_rate * (grad / len(batch))
        log.append({"epoch": epoch, "mean_loss": float(np.mean(losses))})
    return ProjectionHead(W), log


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

HEAD_MAGIC = b"MRLH"
HEAD_VERSION = 1


def save_head(head: ProjectionHead, path: str) -> None:
    with open(path, "wb") as f:
        f.write(HEAD_MAGIC)
        f.write(struct.pack("<I", HEAD_VERSION))
        f.write(struct.pack("<II", head.d_out, head.d_in))
        f.write(head.weight.astype("<f8").tobytes())


def load_head(path: str) -> ProjectionHead:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != HEAD_MAGIC:
            raise ContrastiveError(f"bad magic {magic!r}, expected {HEAD_MAGIC!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != HEAD_VERSION:
            raise ContrastiveError(f"unsupported head version {version}")
        d_out, d_in = struct.unpack("<II", f.read(8))
        raw = f.read(d_out * d_in * 8)
        if len(raw) != d_out * d_in * 8:
            raise ContrastiveError("truncated head file")
        return ProjectionHead(np.frombuffer(raw, dtype="<f8").reshape(d_out, d_in))


def triplet_to_line(t: ContrastiveTriplet) -> str:
    return canonical_json_line(
        {
            "query": {"elements": [element_to_obj(e) for e in t.query_elements]},
            "instruction": t.instruction,
            "positive": t.positive_id,
            "negatives": list(t.negative_ids),
        }
    )


def triplet_from_obj(obj) -> ContrastiveTriplet:
    return ContrastiveTriplet(
        query_elements=payload_from_obj(obj["query"]),
        instruction=obj["instruction"],
        positive_id=obj["positive"],
        negative_ids=tuple(obj["negatives"]),
    )


def read_triplets(path: str) -> list[ContrastiveTriplet]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                out.append(triplet_from_obj(json.loads(line)))
    return out


def write_triplets(path: str, triplets) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for t in triplets:
            f.write(triplet_to_line(t))
