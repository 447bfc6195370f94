"""Four-stage QA dataset synthesis: generate, filter, refine, mine negatives.

Stage 1 prompts a generator for up to five context-independent QA pairs per
chunk (a modality-specific prompt template, with <image k> tags standing in
for the chunk's images). Stage 2 drops pairs with contextual references or
dangling image tags. Stage 3 refines the surviving pairs and attaches three
distinct distractor options. Stage 4 mines hard negatives from a retriever:
top-10 by the question, gold dropped, the five highest-ranked kept.

Every pair that leaves the pipeline is accounted for: the drop report
balances inputs = outputs + sum of reason-coded drops.
"""

from __future__ import annotations

import importlib.resources
import json
import random
import re
from dataclasses import dataclass, field

from .core import Chunk, Element, ImageRef, TextSegment, element_to_obj
from .gateway import GatewayError, payload_from_obj
from .util import canonical_json_line, stable_seed

MAX_RAW_PAIRS = 5
MINE_TOP = 10
MINE_NEGATIVES = 5

# "this document" subsumes the narrower "in this document" and is needed to
# reject questions like "What does this document say about X?"
DEFAULT_CONTEXTUAL_PHRASES = (
    "this document",
    "in the document",
    "this passage",
    "this text",
    "the above",
    "mentioned above",
    "in this context",
)

DROP_REASONS = ("contextual", "image-tag", "refine-fail", "option-fail", "negative-shortage")

_QA_RE = re.compile(r"\[\s*Q(\d*)\s*:\s*(.*?)\s*,\s*A\1\s*:\s*(.*?)\s*\]", re.DOTALL)
_OPTION_RE = re.compile(r"D\d+\s*:\s*(.*?)\s*(?=,\s*D\d+\s*:|\])", re.DOTALL)
_IMAGE_TAG_RE = re.compile(r"<image\s*(\d+)>")


class DatagenError(Exception):
    pass


@dataclass(frozen=True)
class RawQAPair:
    chunk_id: str
    question: str
    answer: str

    def __post_init__(self):
        if not self.question.strip() or not self.answer.strip():
            raise DatagenError("question and answer must be non-empty")


@dataclass(frozen=True)
class QAItem:
    qid: str
    question_elements: tuple[Element, ...]
    options: tuple[str, str, str, str]
    gold_index: int
    gold_doc_id: str

    def __post_init__(self):
        if len(self.options) != 4 or len(set(self.options)) != 4:
            raise DatagenError("a QA item needs exactly 4 pairwise-distinct options")
        if not 0 <= self.gold_index <= 3:
            raise DatagenError("gold_index must be in 0..3")
        object.__setattr__(self, "question_elements", tuple(self.question_elements))
        object.__setattr__(self, "options", tuple(self.options))


@dataclass(frozen=True)
class MinedTriplet:
    qid: str
    positive_id: str
    negative_ids: tuple[str, ...]

    def __post_init__(self):
        negs = tuple(self.negative_ids)
        if not negs or len(negs) > MINE_NEGATIVES:
            raise DatagenError(f"mined negatives must number 1..{MINE_NEGATIVES}")
        if self.positive_id in negs:
            raise DatagenError("mined negatives must exclude the positive")
        object.__setattr__(self, "negative_ids", negs)


@dataclass
class DropReport:
    """Reason-coded drop accounting plus non-drop events (parse/refine fallbacks)."""

    drops: dict = field(default_factory=lambda: {r: 0 for r in DROP_REASONS})
    records: list = field(default_factory=list)  # (reason, qid-or-chunk-id, detail)
    parse_failures: int = 0
    refine_fallbacks: int = 0
    raw_pairs: int = 0

    def drop(self, reason: str, ident: str, detail: str = "") -> None:
        if reason not in self.drops:
            raise DatagenError(f"unknown drop reason {reason!r}")
        self.drops[reason] += 1
        self.records.append((reason, ident, detail))

    def total_drops(self) -> int:
        return sum(self.drops.values())

    def to_obj(self) -> dict:
        return {
            "raw_pairs": self.raw_pairs,
            "drops": dict(self.drops),
            "parse_failures": self.parse_failures,
            "refine_fallbacks": self.refine_fallbacks,
            "records": [list(r) for r in self.records],
        }


def load_prompt(name: str) -> str:
    return (
        importlib.resources.files("mmrag.prompts").joinpath(f"{name}.txt").read_text("utf-8")
    )


def parse_qa_pairs(text: str) -> list[tuple[str, str]]:
    """Parse "[Qn: ... ,An: ...]" groups; label indices must pair up, whitespace is free."""
    out = []
    for _, question, answer in _QA_RE.findall(text):
        if question.strip() and answer.strip():
            out.append((question.strip(), answer.strip()))
    return out


def generate_raw_qa(chunk: Chunk, gen, max_pairs: int = MAX_RAW_PAIRS) -> list[RawQAPair]:
    """Stage 1: prompt the generator and parse at most max_pairs QA pairs.

    Unparseable output yields zero pairs (callers record the parse failure);
    generator failure propagates. Pairs are never fabricated.
    """
    template = load_prompt("qa_multimodal" if chunk.image_count() else "qa_text")
    payload = (TextSegment(text=template),) + chunk.elements
    reply = gen.generate(payload)
    if reply.finish_reason == "error":
        raise GatewayError(f"generator failed on chunk {chunk.id!r}")
    pairs = parse_qa_pairs(reply.text)[:max_pairs]
    return [RawQAPair(chunk_id=chunk.id, question=q, answer=a) for q, a in pairs]


def filter_contextual(pair: RawQAPair, phrases=DEFAULT_CONTEXTUAL_PHRASES) -> bool:
    """Keep unless the lowercased question contains a blocklisted contextual phrase.

    Only literal phrase matches reject; unresolved referents like "the
    speaker" are intentionally not second-guessed.
    """
    question = pair.question.strip().lower()
    if not question:
        return False
    return not any(p in question for p in phrases)


def question_image_tags(question: str) -> list[int]:
    return [int(k) for k in _IMAGE_TAG_RE.findall(question)]


def check_image_tags(pair: RawQAPair, chunk: Chunk) -> bool:
    """Keep iff every <image k> tag resolves to an actual image of the chunk (1-based)."""
    count = chunk.image_count()
    return all(1 <= k <= count for k in question_image_tags(pair.question))


def refine_qa(pair: RawQAPair, gen, report: DropReport | None = None) -> RawQAPair:
    """Stage 3a: compress the pair via the generator; fall back to the input on failure.

    Empty refined questions or answers never propagate; any failure path
    returns the input pair unchanged and bumps the fallback counter.
    """
    prompt = load_prompt("refine").format(question=pair.question, answer=pair.answer)
    try:
        reply = gen.generate((TextSegment(text=prompt),))
    except GatewayError:
        reply = None
    if reply is None or reply.finish_reason == "error":
        if report:
            report.refine_fallbacks += 1
        return pair
    parsed = parse_qa_pairs(reply.text)
    if not parsed or not parsed[0][0].strip() or not parsed[0][1].strip():
        if report:
            report.refine_fallbacks += 1
        return pair
    question, answer = parsed[0]
    return RawQAPair(chunk_id=pair.chunk_id, question=question, answer=answer)


def parse_options(text: str) -> list[str]:
    return [d.strip() for d in _OPTION_RE.findall(text) if d.strip()]


def resolve_question_elements(question: str, chunk: Chunk) -> tuple[Element, ...]:
    """Interleave the question text with the chunk images its <image k> tags name."""
    images = [e for e in chunk.elements if isinstance(e, ImageRef)]
    elements: list[Element] = []
    pos = 0
    for m in _IMAGE_TAG_RE.finditer(question):
        before = question[pos : m.start()]
        if before.strip():
            elements.append(TextSegment(text=before))
        k = int(m.group(1))
        if not 1 <= k <= len(images):
            raise DatagenError(f"image tag <image {k}> does not resolve in chunk {chunk.id!r}")
        elements.append(images[k - 1])
        pos = m.end()
    tail = question[pos:]
    if tail.strip():
        elements.append(TextSegment(text=tail))
    if not elements:
        raise DatagenError("question resolved to an empty payload")
    return tuple(elements)


def generate_options(pair: RawQAPair, chunk: Chunk, gen, seed: int, qid: str,
                     max_retries: int = 2) -> QAItem | None:
    """Stage 3b: request three distractors, dedup, shuffle, record the gold index.

    Distractors equal to the gold answer or to each other (trimmed,
    case-folded) are rejected; up to max_retries re-prompts accumulate
    usable ones. Fewer than three usable distractors discards the item
    (callers log the option-fail drop). The shuffle seed is derived from
    (qid, seed) so re-runs and insertion-order changes cannot move options.
    """
    gold = pair.answer.strip()
    seen = {gold.casefold()}
    distractors: list[str] = []
    for attempt in range(max_retries + 1):
        prompt = load_prompt("options").format(
            question=pair.question, answer=pair.answer, attempt=attempt + 1
        )
        try:
            reply = gen.generate((TextSegment(text=prompt),))
        except GatewayError:
            break
        if reply.finish_reason == "error":
            continue
        for cand in parse_options(reply.text):
            folded = cand.strip().casefold()
            if folded and folded not in seen:
                seen.add(folded)
                distractors.append(cand.strip())
        if len(distractors) >= 3:
            break
    if len(distractors) < 3:
        return None
    options = [gold] + distractors[:3]
    rng = random.Random(stable_seed(qid, seed))
    rng.shuffle(options)
    return QAItem(
        qid=qid,
        question_elements=resolve_question_elements(pair.question, chunk),
        options=tuple(options),
        gold_index=options.index(gold),
        gold_doc_id=pair.chunk_id,
    )


def mine_hard_negatives(item: QAItem, retriever, top: int = MINE_TOP,
                        n_neg: int = MINE_NEGATIVES) -> MinedTriplet | None:
    """Stage 4: top-`top` retrieval, gold dropped, first n_neg kept in rank order.

    Fewer than n_neg remaining keeps what is there provided at least one
    negative survives; otherwise the item is discarded (negative-shortage).
    """
    ranked = list(retriever(item.question_elements, top))
    negatives = [cid for cid in ranked if cid != item.gold_doc_id][:n_neg]
    if not negatives:
        return None
    return MinedTriplet(qid=item.qid, positive_id=item.gold_doc_id, negative_ids=tuple(negatives))


# ---------------------------------------------------------------------------
# Pipeline driver
# ---------------------------------------------------------------------------


def synthesize_qa(chunks, gen, seed: int, max_pairs: int = MAX_RAW_PAIRS,
                  phrases=DEFAULT_CONTEXTUAL_PHRASES) -> tuple[list[QAItem], DropReport]:
    """Stages 1-3 over a chunk collection, outputs ordered by (chunk id, pair index)."""
    report = DropReport()
    items: list[QAItem] = []
    for chunk in sorted(chunks, key=lambda c: c.id):
        pairs = generate_raw_qa(chunk, gen, max_pairs)
        if not pairs:
            report.parse_failures += 1
            continue
        report.raw_pairs += len(pairs)
        for j, pair in enumerate(pairs):
            qid = f"{chunk.id}#q{j}"
            if not filter_contextual(pair, phrases):
                report.drop("contextual", qid, pair.question)
                continue
            if not check_image_tags(pair, chunk):
                report.drop("image-tag", qid, pair.question)
                continue
            refined = refine_qa(pair, gen, report)
            if not check_image_tags(refined, chunk):
                # refinement may corrupt tags; recheck before resolving images
                report.drop("image-tag", qid, refined.question)
                continue
            item = generate_options(refined, chunk, gen, seed, qid)
            if item is None:
                report.drop("option-fail", qid, refined.question)
                continue
            items.append(item)
    return items, report


def mine_all(items, retriever, report: DropReport, top: int = MINE_TOP,
             n_neg: int = MINE_NEGATIVES) -> list[MinedTriplet]:
    triplets = []
    for item in items:
        mined = mine_hard_negatives(item, retriever, top, n_neg)
        if mined is None:
            report.drop("negative-shortage", item.qid)
            continue
        triplets.append(mined)
    return triplets


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def qa_item_to_line(item: QAItem) -> str:
    return canonical_json_line(
        {
            "qid": item.qid,
            "question_elements": [element_to_obj(e) for e in item.question_elements],
            "options": list(item.options),
            "gold_index": item.gold_index,
            "gold_doc": item.gold_doc_id,
        }
    )


def qa_item_from_obj(obj) -> QAItem:
    return QAItem(
        qid=obj["qid"],
        question_elements=payload_from_obj(obj["question_elements"]),
        options=tuple(obj["options"]),
        gold_index=int(obj["gold_index"]),
        gold_doc_id=obj["gold_doc"],
    )


def read_qa_items(path: str) -> list[QAItem]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                out.append(qa_item_from_obj(json.loads(line)))
    return out


def write_qa_items(path: str, items) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for item in items:
            f.write(qa_item_to_line(item))


def mined_to_line(t: MinedTriplet) -> str:
    return canonical_json_line(
        {"qid": t.qid, "positive": t.positive_id, "negatives": list(t.negative_ids)}
    )
