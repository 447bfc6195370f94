"""Answer normalization, EM/F1/accuracy scoring, McNemar's test, eval harness."""

from __future__ import annotations

import json
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

from .core import element_to_obj
from .gateway import GatewayError, payload_from_obj
from .util import canonical_json_line

_ARTICLES = {"a", "an", "the"}
_MC_LETTER_RE = re.compile(r"\b([ABCDabcd])\b")


class EvalError(Exception):
    pass


def normalize_answer(text: str, remove_articles: bool = True) -> str:
    """Case-fold, strip punctuation, drop whole-token articles, collapse whitespace."""
    folded = text.casefold()
    stripped = "".join(ch for ch in folded if not unicodedata.category(ch).startswith("P"))
    tokens = stripped.split()
    if remove_articles:
        tokens = [t for t in tokens if t not in _ARTICLES]
    return " ".join(tokens)


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def token_f1(pred: str, gold: str) -> float:
    """Multiset token overlap on normalized strings; both empty -> 1, one empty -> 0."""
    pred_tokens = normalize_answer(pred).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def mc_accuracy(pred_text: str, options, gold_index: int) -> int:
    """Score a multiple-choice prediction.

    The first standalone letter A-D (word-boundary delimited, any case)
    decides; with no such letter the prediction falls back to normalized
    equality against the option texts; anything else scores 0.
    """
    if len(options) != 4 or not 0 <= gold_index <= 3:
        raise EvalError("mc_accuracy requires 4 options and gold_index in 0..3")
    m = _MC_LETTER_RE.search(pred_text)
    if m:
        return int(ord(m.group(1).upper()) - ord("A") == gold_index)
    pred_norm = normalize_answer(pred_text)
    for i, opt in enumerate(options):
        if pred_norm == normalize_answer(opt):
            return int(i == gold_index)
    return 0


# ---------------------------------------------------------------------------
# McNemar's paired test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairedOutcomes:
    """2x2 paired counts: a both correct, b only A, c only B, d both wrong."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise EvalError("paired counts must be non-negative")

    @property
    def n(self) -> int:
        return self.a + self.b + self.c + self.d


def mcnemar(outcomes: PairedOutcomes, continuity: bool = False) -> dict:
    """Chi-square McNemar statistic on the discordant counts, 1 degree of freedom.

    statistic = (|b - c| - correction)^2 / (b + c), correction 1 when the
    continuity flag is set, else 0; the p-value is the chi-square(1)
    survival function erfc(sqrt(statistic / 2)). Zero discordants define
    statistic 0 with p = 1.
    """
    b, c = outcomes.b, outcomes.c
    if b + c == 0:
        return {"statistic": 0.0, "p_value": 1.0, "df": 1}
    correction = 1.0 if continuity else 0.0
    statistic = (abs(b - c) - correction) ** 2 / (b + c)
    p_value = math.erfc(math.sqrt(statistic / 2.0))
    return {"statistic": statistic, "p_value": p_value, "df": 1}


def paired_outcomes(correct_a, correct_b) -> PairedOutcomes:
    """Tally two equal-length boolean outcome sequences into the 2x2 table."""
    if len(correct_a) != len(correct_b):
        raise EvalError("paired outcome sequences must have equal length")
    a = b = c = d = 0
    for xa, xb in zip(correct_a, correct_b):
        if xa and xb:
            a += 1
        elif xa:
            b += 1
        elif xb:
            c += 1
        else:
            d += 1
    return PairedOutcomes(a, b, c, d)


# ---------------------------------------------------------------------------
# Evaluation harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalQuery:
    """One benchmark query: open QA carries an answer; multiple choice carries options."""

    qid: str
    elements: tuple
    answer: str | None = None
    options: tuple | None = None
    gold_index: int | None = None
    gold_doc_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        if self.options is not None:
            object.__setattr__(self, "options", tuple(self.options))
            if self.gold_index is None:
                raise EvalError(f"query {self.qid!r} has options but no gold_index")
        elif self.answer is None:
            raise EvalError(f"query {self.qid!r} needs either an answer or options")

    @property
    def is_multiple_choice(self) -> bool:
        return self.options is not None

    def gold_answer_text(self) -> str:
        if self.is_multiple_choice:
            return self.options[self.gold_index]
        return self.answer


def eval_query_from_obj(obj) -> EvalQuery:
    return EvalQuery(
        qid=obj["qid"],
        elements=payload_from_obj(obj.get("question_elements", obj.get("elements", []))),
        answer=obj.get("answer"),
        options=tuple(obj["options"]) if "options" in obj else None,
        gold_index=obj.get("gold_index"),
        gold_doc_id=obj.get("gold_doc"),
    )


def read_eval_queries(path: str) -> list[EvalQuery]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                out.append(eval_query_from_obj(json.loads(line)))
    return out


@dataclass
class EvalReport:
    dataset: str
    k: int
    queries: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def recompute_aggregates(self) -> dict:
        open_rows = [q for q in self.queries if q["em"] is not None]
        mc_rows = [q for q in self.queries if q["em"] is None]
        return {
            "em": sum(q["em"] for q in open_rows) / len(open_rows) if open_rows else 0.0,
            "f1": sum(q["f1"] for q in open_rows) / len(open_rows) if open_rows else 0.0,
            "acc": sum(q["correct"] for q in mc_rows) / len(mc_rows) if mc_rows else 0.0,
        }

    def to_obj(self) -> dict:
        return {
            "dataset": self.dataset,
            "k": self.k,
            "aggregates": self.aggregates,
            "queries": self.queries,
            "manifest": self.manifest,
        }

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(self.to_obj(), ensure_ascii=False, indent=2) + "\n")


def run_rag_eval(queries, retriever, chunk_lookup, gen, k: int, dataset: str = "dataset",
                 template: str | None = None, manifest: dict | None = None,
                 gen_params: dict | None = None) -> EvalReport:
    """Retrieve-then-generate evaluation over a query set.

    k = 0 skips retrieval entirely (direct-answer baseline: the payload is
    the bare question). Per-query generator failures score zero with an
    error flag; they never abort the run. Aggregates are recomputed from the
    per-query rows at the end, so the two always agree.
    """
    from .feedback import DEFAULT_CONTEXT_TEMPLATE, render_context_prompt

    template = template or DEFAULT_CONTEXT_TEMPLATE
    report = EvalReport(dataset=dataset, k=k, manifest=manifest or {})
    for query in queries:
        retrieved: list[str] = []
        if k >= 1:
            retrieved = list(retriever(query.elements, k))
        if retrieved:
            docs = [chunk_lookup(cid) for cid in retrieved]
            payload = render_context_prompt(query.elements, docs, template)
        else:
            payload = query.elements
        error = False
        text = ""
        try:
            reply = gen.generate(payload, gen_params)
            if reply.finish_reason == "error":
                error = True
            else:
                text = reply.text
        except GatewayError:
            error = True

        if query.is_multiple_choice:
            correct = 0 if error else mc_accuracy(text, query.options, query.gold_index)
            em = f1 = None
        else:
            em = 0 if error else exact_match(text, query.answer)
            f1 = 0.0 if error else token_f1(text, query.answer)
            correct = int(em == 1)
        report.queries.append(
            {
                "qid": query.qid,
                "retrieved": retrieved,
                "generated": text,
                "em": em,
                "f1": f1,
                "correct": correct,
                "error": error,
            }
        )
    report.aggregates = report.recompute_aggregates()
    return report


def report_line(report: EvalReport) -> str:
    return canonical_json_line(report.to_obj())


def qa_items_as_eval_queries(items) -> list[EvalQuery]:
    """Adapt synthesized multiple-choice items to the harness input type."""
    return [
        EvalQuery(
            qid=i.qid,
            elements=i.question_elements,
            options=i.options,
            gold_index=i.gold_index,
            gold_doc_id=i.gold_doc_id,
        )
        for i in items
    ]


def element_objs(elements) -> list[dict]:
    return [element_to_obj(e) for e in elements]
