"""Domain types and the mixed-modal corpus store.

A document is an ordered sequence of text segments and image references;
order is significant and round-trips through the JSONL formats byte for
byte. Images are always stored by reference (uri plus optional hash),
never by inline bytes: resolution happens only at the model boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .util import canonical_json_line


class CorpusError(Exception):
    """Malformed corpus data or a violated store invariant."""


@dataclass(frozen=True)
class TextSegment:
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise CorpusError("TextSegment.text must be non-empty after trimming")


@dataclass(frozen=True)
class ImageRef:
    uri: str
    content_hash: str | None = None
    alt: str | None = None

    def __post_init__(self):
        if not self.uri:
            raise CorpusError("ImageRef.uri must be non-empty")


Element = TextSegment | ImageRef


@dataclass(frozen=True)
class MixedModalDoc:
    id: str
    elements: tuple[Element, ...]
    source: str | None = None

    def __post_init__(self):
        if not self.id:
            raise CorpusError("document id must be non-empty")
        if not self.elements:
            raise CorpusError(f"document {self.id!r} has no elements")
        object.__setattr__(self, "elements", tuple(self.elements))


@dataclass(frozen=True)
class ModalityProfile:
    """Stratification key: text presence crossed with a coarse image-count bucket."""

    has_text: bool
    image_count_bucket: str  # one of "0", "1", "2+"

    def key(self) -> tuple[bool, str]:
        return (self.has_text, self.image_count_bucket)


@dataclass(frozen=True)
class Chunk:
    id: str
    doc_id: str
    seq: int
    elements: tuple[Element, ...]
    text_token_count: int
    modality_profile: ModalityProfile

    def __post_init__(self):
        if self.text_token_count < 0:
            raise CorpusError("text_token_count must be non-negative")
        if self.seq < 0:
            raise CorpusError("seq must be non-negative")
        object.__setattr__(self, "elements", tuple(self.elements))

    def image_count(self) -> int:
        return sum(1 for e in self.elements if isinstance(e, ImageRef))


def modality_profile(elements) -> ModalityProfile:
    """Profile computed from elements only: text presence and 0/1/2+ image bucket."""
    has_text = any(isinstance(e, TextSegment) for e in elements)
    n_images = sum(1 for e in elements if isinstance(e, ImageRef))
    bucket = "0" if n_images == 0 else ("1" if n_images == 1 else "2+")
    return ModalityProfile(has_text=has_text, image_count_bucket=bucket)


# ---------------------------------------------------------------------------
# JSONL (de)serialization
#
# Corpus line:  {"id": str, "source": str?, "elements": [...]}
# Chunk line adds {"doc_id": str, "seq": int, "text_token_count": int}.
# Element: {"type":"text","text":str} | {"type":"image","uri":str,"sha256":str?,"alt":str?}
# ---------------------------------------------------------------------------


def element_to_obj(el: Element) -> dict:
    if isinstance(el, TextSegment):
        return {"type": "text", "text": el.text}
    obj = {"type": "image", "uri": el.uri}
    if el.content_hash is not None:
        obj["sha256"] = el.content_hash
    if el.alt is not None:
        obj["alt"] = el.alt
    return obj


def element_from_obj(obj) -> Element:
    if not isinstance(obj, dict) or "type" not in obj:
        raise CorpusError(f"element is not an object with a type: {obj!r}")
    if obj["type"] == "text":
        return TextSegment(text=obj["text"])
    if obj["type"] == "image":
        return ImageRef(uri=obj["uri"], content_hash=obj.get("sha256"), alt=obj.get("alt"))
    raise CorpusError(f"unknown element type {obj['type']!r}")


def doc_to_line(doc: MixedModalDoc) -> str:
    obj: dict = {"id": doc.id}
    if doc.source is not None:
        obj["source"] = doc.source
    obj["elements"] = [element_to_obj(e) for e in doc.elements]
    return canonical_json_line(obj)


def doc_from_obj(obj) -> MixedModalDoc:
    if not isinstance(obj, dict):
        raise CorpusError("document record is not an object")
    try:
        elements = tuple(element_from_obj(e) for e in obj["elements"])
        return MixedModalDoc(id=obj["id"], elements=elements, source=obj.get("source"))
    except KeyError as exc:
        raise CorpusError(f"document record missing field {exc}") from exc


def chunk_to_line(chunk: Chunk) -> str:
    obj = {
        "id": chunk.id,
        "doc_id": chunk.doc_id,
        "seq": chunk.seq,
        "text_token_count": chunk.text_token_count,
        "elements": [element_to_obj(e) for e in chunk.elements],
    }
    return canonical_json_line(obj)


def chunk_from_obj(obj) -> Chunk:
    if not isinstance(obj, dict):
        raise CorpusError("chunk record is not an object")
    try:
        elements = tuple(element_from_obj(e) for e in obj["elements"])
        return Chunk(
            id=obj["id"],
            doc_id=obj["doc_id"],
            seq=int(obj["seq"]),
            elements=elements,
            text_token_count=int(obj["text_token_count"]),
            modality_profile=modality_profile(elements),
        )
    except KeyError as exc:
        raise CorpusError(f"chunk record missing field {exc}") from exc


# ---------------------------------------------------------------------------
# Corpus store
# ---------------------------------------------------------------------------


@dataclass
class IngestReport:
    read: int = 0
    kept: int = 0
    skipped: list = field(default_factory=list)  # (line_number, reason)


class CorpusStore:
    """In-memory registry of documents and chunks.

    Construction is single-writer; once populated, values are immutable and
    the store is safe for concurrent reads. Ids are unique per namespace and
    every chunk.doc_id must resolve to a stored document.
    """

    def __init__(self):
        self.documents: dict[str, MixedModalDoc] = {}
        self.chunks: dict[str, Chunk] = {}
        self.ingest_report = IngestReport()

    def add_document(self, doc: MixedModalDoc) -> None:
        if doc.id in self.documents:
            raise CorpusError(f"duplicate document id {doc.id!r}")
        self.documents[doc.id] = doc

    def add_chunk(self, chunk: Chunk, require_parent: bool = True) -> None:
        if chunk.id in self.chunks:
            raise CorpusError(f"duplicate chunk id {chunk.id!r}")
        if require_parent and chunk.doc_id not in self.documents:
            raise CorpusError(f"chunk {chunk.id!r} references unknown document {chunk.doc_id!r}")
        self.chunks[chunk.id] = chunk

    def get_chunk(self, chunk_id: str) -> Chunk | None:
        """The stored chunk, or None as the not-found signal (doc ids do not resolve here)."""
        return self.chunks.get(chunk_id)

    def get_document(self, doc_id: str) -> MixedModalDoc | None:
        return self.documents.get(doc_id)


def ingest_corpus(path: str, strict: bool = True) -> CorpusStore:
    """Read a corpus JSONL file into a store, preserving record order.

    strict (the default) aborts on the first malformed line with its line
    number; lenient mode skips bad lines and counts them in the report.
    Silent data loss is worse than a failed run, hence the default.
    """
    store = CorpusStore()
    report = store.ingest_report
    try:
        f = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {path!r}: {exc}") from exc
    with f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            report.read += 1
            try:
                doc = doc_from_obj(json.loads(line))
                store.add_document(doc)
            except (json.JSONDecodeError, CorpusError, TypeError) as exc:
                if strict:
                    raise CorpusError(f"{path}:{lineno}: {exc}") from exc
                report.skipped.append((lineno, str(exc)))
                continue
            report.kept += 1
    return store


def read_chunks(path: str, strict: bool = True) -> list[Chunk]:
    """Read a chunk JSONL file; same strict/lenient contract as ingest_corpus."""
    chunks: list[Chunk] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                chunk = chunk_from_obj(json.loads(line))
                if chunk.id in seen:
                    raise CorpusError(f"duplicate chunk id {chunk.id!r}")
                seen.add(chunk.id)
                chunks.append(chunk)
            except (json.JSONDecodeError, CorpusError, TypeError) as exc:
                if strict:
                    raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return chunks


def write_docs(path: str, docs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for doc in docs:
            f.write(doc_to_line(doc))


def write_chunks(path: str, chunks) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for chunk in chunks:
            f.write(chunk_to_line(chunk))
