"""Preference-dataset construction from generator feedback.

For each query, the top-K retrieved documents are probed with a sliding
window of length L: each window is rendered into a context prompt, sent to
the generator, and scored against the gold answer. The first window whose
score qualifies marks its first document as the positive; the other K-1
retrieved documents become negatives in their original rank order. Queries
where no window qualifies contribute nothing.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .core import Chunk, Element, TextSegment
from .gateway import GatewayError
from .evaluation import EvalQuery, exact_match, mc_accuracy, token_f1
from .util import canonical_json_line

METRIC_EXACT_MATCH = "exact_match"
METRIC_TOKEN_F1 = "token_f1"
METRIC_MC_ACCURACY = "mc_accuracy"
METRICS = (METRIC_EXACT_MATCH, METRIC_TOKEN_F1, METRIC_MC_ACCURACY)

DEFAULT_CONTEXT_TEMPLATE = (
    "Answer the question using the provided documents.\n\n{documents}\n\n{question}"
)

_SLOT_RE = re.compile(r"\{documents\}|\{question\}")


class FeedbackError(Exception):
    pass


@dataclass(frozen=True)
class FeedbackConfig:
    k: int
    window: int  # L
    stride: int = 1
    metric: str = METRIC_EXACT_MATCH
    threshold: float = 1.0
    prompt_template: str = DEFAULT_CONTEXT_TEMPLATE

    def __post_init__(self):
        if self.k < 1:
            raise FeedbackError("retrieval depth K must be >= 1")
        if not 1 <= self.window <= self.k:
            raise FeedbackError(f"window length must satisfy 1 <= L <= K, got L={self.window} K={self.k}")
        if self.stride < 1:
            raise FeedbackError("stride must be >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise FeedbackError("threshold must be in [0, 1]")
        if self.metric not in METRICS:
            raise FeedbackError(f"unknown metric {self.metric!r}")


@dataclass(frozen=True)
class PreferenceRecord:
    qid: str
    positive_id: str
    negative_ids: tuple[str, ...]
    window_start: int
    metric: str
    metric_value: float

    def __post_init__(self):
        if self.positive_id in self.negative_ids:
            raise FeedbackError("positive must not appear among negatives")
        object.__setattr__(self, "negative_ids", tuple(self.negative_ids))


def render_context_prompt(question_elements, window_docs: list[Chunk], template: str) -> tuple[Element, ...]:
    """Expand the template into a mixed-modal payload.

    {documents} expands to the window documents in order, each introduced by
    a "Document i:" line with its image elements inlined in position;
    {question} expands to the question payload. Surrounding template text
    becomes plain text segments.
    """
    if not window_docs:
        raise FeedbackError("context prompt requires a non-empty document window")
    elements: list[Element] = []

    def add_text(text: str):
        if text.strip():
            elements.append(TextSegment(text=text))

    pos = 0
    for m in _SLOT_RE.finditer(template):
        add_text(template[pos : m.start()])
        if m.group(0) == "{documents}":
            for i, doc in enumerate(window_docs, start=1):
                add_text(f"Document {i}:")
                elements.extend(doc.elements)
        else:
            elements.extend(question_elements)
        pos = m.end()
    add_text(template[pos:])
    return tuple(elements)


def _score(metric: str, text: str, query: EvalQuery) -> float:
    if metric == METRIC_EXACT_MATCH:
        return float(exact_match(text, query.gold_answer_text()))
    if metric == METRIC_TOKEN_F1:
        return token_f1(text, query.gold_answer_text())
    if query.options is None:
        raise FeedbackError(f"query {query.qid!r} has no options for mc_accuracy scoring")
    return float(mc_accuracy(text, query.options, query.gold_index))


def _qualifies(metric: str, score: float, threshold: float) -> bool:
    # exact match is all-or-nothing regardless of the configured threshold
    if metric == METRIC_EXACT_MATCH:
        return score == 1.0
    return score >= threshold


@dataclass
class FeedbackLog:
    skipped_short: list = field(default_factory=list)  # qid, hits available
    window_errors: list = field(default_factory=list)  # (qid, window_start)
    no_pass: list = field(default_factory=list)  # qid


def build_preference_dataset(queries, retriever, chunk_lookup, gen,
                             cfg: FeedbackConfig) -> tuple[list[PreferenceRecord], FeedbackLog]:
    """Sliding-window probing over each query's top-K retrieval.

    Windows start at 0, stride, 2*stride, ... while start + L <= K and are
    probed strictly in that order; the earliest qualifying window wins.
    Generator failure on a window scores it 0 (logged) and probing moves on.
    """
    log = FeedbackLog()
    records: list[PreferenceRecord] = []
    for query in queries:
        ranked = list(retriever(query.elements, cfg.k))
        if len(ranked) < cfg.k:
            log.skipped_short.append((query.qid, len(ranked)))
            continue
        ranked = ranked[: cfg.k]
        hit = None
        for start in range(0, cfg.k - cfg.window + 1, cfg.stride):
            window_ids = ranked[start : start + cfg.window]
            docs = [chunk_lookup(cid) for cid in window_ids]
            payload = render_context_prompt(query.elements, docs, cfg.prompt_template)
            try:
                reply = gen.generate(payload)
                if reply.finish_reason == "error":
                    raise GatewayError("generator reported an error")
                score = _score(cfg.metric, reply.text, query)
            except GatewayError:
                log.window_errors.append((query.qid, start))
                score = 0.0
            if _qualifies(cfg.metric, score, cfg.threshold):
                hit = (start, score)
                break
        if hit is None:
            log.no_pass.append(query.qid)
            continue
        start, score = hit
        positive = ranked[start]
        negatives = tuple(cid for cid in ranked if cid != positive)
        records.append(
            PreferenceRecord(
                qid=query.qid,
                positive_id=positive,
                negative_ids=negatives,
                window_start=start,
                metric=cfg.metric,
                metric_value=score,
            )
        )
    return records, log


def preference_to_line(rec: PreferenceRecord) -> str:
    return canonical_json_line(
        {
            "qid": rec.qid,
            "positive": rec.positive_id,
            "negatives": list(rec.negative_ids),
            "window_start": rec.window_start,
            "metric": rec.metric,
            "metric_value": rec.metric_value,
        }
    )


def read_preferences(path: str) -> list[PreferenceRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            out.append(
                PreferenceRecord(
                    qid=obj["qid"],
                    positive_id=obj["positive"],
                    negative_ids=tuple(obj["negatives"]),
                    window_start=int(obj["window_start"]),
                    metric=obj["metric"],
                    metric_value=float(obj["metric_value"]),
                )
            )
    return out


def write_preferences(path: str, records) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(preference_to_line(rec))
