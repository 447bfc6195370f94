"""Segmentation of mixed-modal documents into token-capped chunks, plus sampling.

The token unit is a deterministic rule, not a model tokenizer: contiguous
Unicode letter/digit runs are tokens and every other non-whitespace symbol
is its own token. The count is a length heuristic; determinism without
model weights is what the rest of the pipeline needs.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass

from .core import (
    Chunk,
    CorpusError,
    Element,
    ImageRef,
    MixedModalDoc,
    ModalityProfile,
    TextSegment,
    modality_profile,
)

# Letter/digit runs ([^\W_] is isalnum without the underscore), else one
# token per non-whitespace character.
_TOKEN_RE = re.compile(r"[^\W_]+|\S", re.UNICODE)

DEFAULT_MAX_TEXT_TOKENS = 200


@dataclass(frozen=True)
class ChunkerConfig:
    max_text_tokens: int = DEFAULT_MAX_TEXT_TOKENS
    seed: int = 0

    def __post_init__(self):
        if self.max_text_tokens < 1:
            raise ValueError("max_text_tokens must be >= 1")


def tokenize_text(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def token_spans(text: str) -> list[tuple[int, int]]:
    """(start, end) character offsets of each token, for split-point arithmetic."""
    return [m.span() for m in _TOKEN_RE.finditer(text)]


def count_text_tokens(elements) -> int:
    """Token count over TextSegments only; images are excluded from the count."""
    return sum(len(tokenize_text(e.text)) for e in elements if isinstance(e, TextSegment))


def segment_document(doc: MixedModalDoc, cfg: ChunkerConfig | None = None) -> list[Chunk]:
    """Greedy split of a document into chunks of at most cfg.max_text_tokens tokens.

    The current chunk is filled until adding the next token would exceed the
    cap. A TextSegment may be cut at token boundaries (cuts land on the start
    offset of the first token of the next chunk, so concatenating the pieces
    reproduces the original string exactly, whitespace included). An ImageRef
    is never split: it costs zero tokens and attaches to the chunk currently
    being filled.
    """
    cfg = cfg or ChunkerConfig()
    if not doc.elements:
        raise CorpusError(f"document {doc.id!r} has no elements")

    cap = cfg.max_text_tokens
    chunks: list[Chunk] = []
    current: list[Element] = []
    current_tokens = 0

    def flush():
        nonlocal current, current_tokens
        if not current:
            return
        seq = len(chunks)
        chunks.append(
            Chunk(
                id=f"{doc.id}#{seq}",
                doc_id=doc.id,
                seq=seq,
                elements=tuple(current),
                text_token_count=current_tokens,
                modality_profile=modality_profile(current),
            )
        )
        current = []
        current_tokens = 0

    for el in doc.elements:
        if isinstance(el, ImageRef):
            current.append(el)
            continue
        text = el.text
        spans = token_spans(text)
        pos = 0  # character offset of the unconsumed remainder
        i = 0  # next token index
        while i < len(spans):
            room = cap - current_tokens
            if room == 0:
                flush()
                room = cap
            take = min(room, len(spans) - i)
            end_token = i + take
            if end_token < len(spans):
                cut = spans[end_token][0]  # start of the first token of the next piece
            else:
                cut = len(text)
            piece = text[pos:cut]
            current.append(TextSegment(text=piece))
            current_tokens += take
            pos = cut
            i = end_token
        if not spans and text:
            # whitespace-only segments are rejected at construction, so this
            # branch is unreachable for valid documents; keep it for safety
            current.append(TextSegment(text=text))
    flush()

    if not chunks:
        # images-only document never flushed above only if elements was empty,
        # which is guarded; an all-image document still forms one chunk
        raise CorpusError(f"document {doc.id!r} produced no chunks")
    return chunks


def merge_adjacent_text(elements) -> tuple[Element, ...]:
    """Canonical element form: runs of adjacent TextSegments concatenated.

    Splitting a segment at a token boundary turns one TextSegment into two;
    merging adjacent text on both sides makes the reassembly identity exact:
    merge(concat(chunk elements in seq order)) == merge(document elements).
    """
    merged: list[Element] = []
    for el in elements:
        if isinstance(el, TextSegment) and merged and isinstance(merged[-1], TextSegment):
            merged[-1] = TextSegment(text=merged[-1].text + el.text)
        else:
            merged.append(el)
    return tuple(merged)


def reassemble(chunks: list[Chunk]) -> tuple[Element, ...]:
    """Concatenate chunks in seq order and return the canonical element form."""
    ordered = sorted(chunks, key=lambda c: c.seq)
    flat: list[Element] = []
    for chunk in ordered:
        flat.extend(chunk.elements)
    return merge_adjacent_text(flat)


def _stratum_allotments(counts: dict, n: int) -> dict:
    """Largest-remainder apportionment of n across strata, proportional to counts.

    Quotas are n * share; each stratum gets the floor, and the leftover units
    go to the largest fractional remainders (ties broken by ascending stratum
    key) so the allotments sum to exactly n.
    """
    total = sum(counts.values())
    quotas = {k: n * c / total for k, c in counts.items()}
    allot = {k: int(q) for k, q in quotas.items()}
    leftover = n - sum(allot.values())
    remainders = sorted(quotas, key=lambda k: (-(quotas[k] - allot[k]), k))
    for k in remainders[:leftover]:
        allot[k] += 1
    return allot


def stratified_sample(chunks: list[Chunk], n: int, seed: int) -> list[Chunk]:
    """Sample n chunks preserving the modality distribution.

    Strata are ModalityProfile keys (text presence x image bucket); per-stratum
    allotments follow the largest-remainder rule and within-stratum selection
    is uniform without replacement under the seed. Output preserves the input
    order of the selected chunks and is deterministic given (chunks, n, seed).
    """
    if not chunks:
        raise ValueError("cannot sample from an empty population")
    if n > len(chunks):
        raise ValueError(f"sample size {n} exceeds population {len(chunks)}")
    if n <= 0:
        raise ValueError("sample size must be positive")

    by_stratum: dict[tuple, list[int]] = {}
    for idx, chunk in enumerate(chunks):
        by_stratum.setdefault(chunk.modality_profile.key(), []).append(idx)

    counts = {k: len(v) for k, v in by_stratum.items()}
    allot = _stratum_allotments(counts, n)

    rng = random.Random(seed)
    selected: list[int] = []
    for key in sorted(by_stratum):
        want = allot[key]
        if want:
            selected.extend(rng.sample(by_stratum[key], want))
    selected.sort()
    return [chunks[i] for i in selected]
