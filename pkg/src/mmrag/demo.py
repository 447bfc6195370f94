"""Bundled synthetic corpus with planted answers, for demos and the smoke suite.

Every document carries a unique topic token, a unique site token, and a
fact sentence ("The ... ledger records <answer> ...") whose answer can only
be produced by a generator that saw that document. The matching scripted
fixtures make the generator behave accordingly: QA pairs come out of the
document's own chunk, refinement compresses them, option prompts yield
three distinct distractors, and context prompts are answered correctly iff
the fact sentence is present in the rendered context. Retrieval quality
therefore translates directly into end-to-end accuracy.

Construction details that keep the planted retrieval signal strong under
the signed-feature-hash embedder: topic and site tokens repeat inside the
fact sentences, questions keep both tokens in a single leading text
segment (token buckets depend on the element index), image tags go at the
end of the question so the resolved payload shares the document's image
reference, and long documents lead with their image so the fact chunk
keeps it after segmentation.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .core import ImageRef, MixedModalDoc, TextSegment

_ADJECTIVES = (
    "amber", "crimson", "cobalt", "jade", "ivory", "onyx", "scarlet", "teal",
    "umber", "violet", "sable", "copper",
)

_FILLER = (
    "The maintenance crew files weekly reports on storage conditions.",
    "Inventory rotation follows the regional schedule without exception.",
    "Shipping manifests are archived after every quarterly audit.",
    "The facility operates around the clock during harvest season.",
    "Visitors must register with the front office before entering.",
    "Temperature and humidity are logged by automated sensors.",
    "The northern annex was renovated two winters ago.",
    "Freight arrives by rail on alternating weekdays.",
)


@dataclass(frozen=True)
class DemoEntry:
    doc_id: str
    topic: str
    site: str
    answer: str
    question: str
    has_image: bool


@dataclass
class DemoBundle:
    docs: list
    entries: list
    fixtures: dict


def _answer(i: int) -> str:
    return f"{_ADJECTIVES[i % len(_ADJECTIVES)]} vault {i:03d}"


def _distractors(i: int, n_docs: int) -> list[str]:
    return [_answer((i + off) % n_docs) for off in (1, 2, 3)]


def build_demo(n_docs: int = 200, seed: int = 7, long_every: int = 10,
               image_every: int = 3) -> DemoBundle:
    """Deterministic corpus + fixtures; every long_every-th doc overflows one chunk."""
    rng = random.Random(seed)
    docs = []
    entries = []
    rules = []
    for i in range(n_docs):
        doc_id = f"doc-{i:03d}"
        topic = f"project{i:03d}glimmer"
        site = f"site{i:03d}ridge"
        answer = _answer(i)
        is_long = i % long_every == 0
        has_image = i % image_every == 0 and not is_long

        sentences = [
            f"Project {topic} operates at {site}.",
            f"The {topic} ledger records {answer} for this project.",
            f"Auditors reference {topic} and {site} in quarterly reviews.",
        ]
        if is_long:
            # keep the planted tokens dominant in the 200-token fact chunk,
            # then overflow the cap with unique filler tokens so the tail
            # splits into a second chunk without inflating repeated buckets
            sentences.insert(0, f"Reference {topic} {site} {topic} {site} {topic} {site} {topic}.")
            sentences += rng.sample(_FILLER, k=3)
            sentences.append(" ".join(f"ref{i:03d}n{j}" for j in range(300)))
        else:
            sentences += rng.sample(_FILLER, k=3)
        body = TextSegment(text=" ".join(sentences))
        if has_image:
            image = ImageRef(uri=f"img://demo/{doc_id}/fig1.png", alt=f"chart for {topic}")
            elements: tuple = (body, image)
        else:
            elements = (body,)
        docs.append(MixedModalDoc(id=doc_id, elements=elements, source="demo"))

        tag = " See <image 1>." if has_image else ""
        question = f"What does the ledger record for project {topic} at {site}?{tag}"
        entries.append(DemoEntry(doc_id, topic, site, answer, question, has_image))

        d1, d2, d3 = _distractors(i, n_docs)
        # order matters: stage-specific markers keep one item's prompts from
        # triggering another stage's reply
        rules.append(
            {
                "contains_all": ["Correct answer: " + answer, "Attempt:"],
                "text": f"[D1: {d1} ,D2: {d2} ,D3: {d3}]",
            }
        )
        rules.append(
            {
                "contains_all": ["Rewrite the question", "Answer: " + answer],
                "text": f"[Q: {question} ,A: {answer}]",
            }
        )
        rules.append(
            {
                # fires only when THIS question is asked AND its gold fact is
                # in the rendered context, regardless of rule order
                "contains_all": ["Answer the question using the provided documents.",
                                 f"for project {topic} at {site}?",
                                 f"ledger records {answer}"],
                "text": answer,
            }
        )
        qa_reply = f"[Q1: {question} ,A1: {answer}]"
        if i % 17 == 0:
            # a second, contextual pair that the error filter must drop
            qa_reply += f", [Q2: What does this document say about {site}? ,A2: {answer}]"
        rules.append(
            {
                "contains_all": ["raise no more than five questions", f"ledger records {answer}"],
                "text": qa_reply,
            }
        )
    fixtures = {"default": "UNKNOWN", "rules": rules}
    return DemoBundle(docs=docs, entries=entries, fixtures=fixtures)
