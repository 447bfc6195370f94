#!/usr/bin/env python3
"""The four-stage QA synthesis pipeline with a scripted generator.

Generates raw QA pairs per chunk, filters contextual and image-tag
violations, refines and attaches distractor options, mines hard negatives
through the index, and prints the drop accounting that balances the whole
run.
"""

import json

from mmrag import index as ix
from mmrag.chunker import ChunkerConfig, segment_document
from mmrag.datagen import mine_all, synthesize_qa
from mmrag.demo import build_demo
from mmrag.gateway import DEFAULT_QUERY_INSTRUCTION, ReferenceEmbedder, ScriptedGenerator

bundle = build_demo(n_docs=60, seed=7)
chunks = []
for doc in bundle.docs:
    chunks.extend(segment_document(doc, ChunkerConfig()))

gen = ScriptedGenerator(bundle.fixtures)
items, report = synthesize_qa(chunks, gen, seed=11)

print(f"chunks in: {len(chunks)}  raw pairs: {report.raw_pairs}  items out: {len(items)}")
print("drops by reason:", {k: v for k, v in report.drops.items() if v})
print("parse failures (chunks yielding no pairs):", report.parse_failures)
print("balance: raw_pairs == items + drops ->",
      report.raw_pairs == len(items) + report.total_drops())

sample = items[0]
print(f"\nsample item {sample.qid}:")
print("  question:", " ".join(
    e.text if hasattr(e, "text") else f"<image {i}>" for i, e in enumerate(sample.question_elements, 1)
))
for i, opt in enumerate(sample.options):
    marker = "*" if i == sample.gold_index else " "
    print(f"  {marker} {chr(65 + i)}. {opt}")

embedder = ReferenceEmbedder(dim=2048)
vectors = embedder.embed([c.elements for c in chunks], role="document")
dense = ix.build({c.id: v for c, v in zip(chunks, vectors)}, ix.DimensionLadder())
retriever = ix.retriever_closure(dense, embedder, DEFAULT_QUERY_INSTRUCTION)

mined = mine_all(items, retriever, report, top=10, n_neg=5)
print(f"\nmined {len(mined)} training triplets; first one:")
print(json.dumps({"qid": mined[0].qid, "positive": mined[0].positive_id,
                  "negatives": list(mined[0].negative_ids)}, indent=2))
