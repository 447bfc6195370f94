#!/usr/bin/env python3
"""Generator-feedback preference building and the evaluation harness.

Probes each query's top-K retrieval with a sliding window, records which
window first lets the scripted generator answer correctly, then runs the
end-to-end evaluation (retrieve, prompt, generate, score) and the paired
McNemar test between two retriever settings.
"""

from mmrag import index as ix
from mmrag.chunker import ChunkerConfig, segment_document
from mmrag.datagen import synthesize_qa
from mmrag.demo import build_demo
from mmrag.evaluation import PairedOutcomes, mcnemar, qa_items_as_eval_queries, run_rag_eval
from mmrag.feedback import FeedbackConfig, build_preference_dataset
from mmrag.gateway import DEFAULT_QUERY_INSTRUCTION, ReferenceEmbedder, ScriptedGenerator

bundle = build_demo(n_docs=80, seed=7)
chunks = []
for doc in bundle.docs:
    chunks.extend(segment_document(doc, ChunkerConfig()))
chunk_map = {c.id: c for c in chunks}

embedder = ReferenceEmbedder(dim=2048)
vectors = embedder.embed([c.elements for c in chunks], role="document")
dense = ix.build({c.id: v for c, v in zip(chunks, vectors)}, ix.DimensionLadder())
retriever = ix.retriever_closure(dense, embedder, DEFAULT_QUERY_INSTRUCTION)
gen = ScriptedGenerator(bundle.fixtures)

items, _ = synthesize_qa(chunks, gen, seed=11)
queries = qa_items_as_eval_queries(items)

cfg = FeedbackConfig(k=4, window=2, metric="mc_accuracy", threshold=1.0)
records, log = build_preference_dataset(queries, retriever, chunk_map.__getitem__, gen, cfg)
print(f"feedback: {len(records)} preference records from {len(queries)} queries "
      f"({len(log.no_pass)} had no qualifying window)")
rec = records[0]
print(f"  {rec.qid}: positive {rec.positive_id}, window_start {rec.window_start}, "
      f"{len(rec.negative_ids)} negatives")

report = run_rag_eval(queries, retriever, chunk_map.__getitem__, gen, k=1, dataset="demo")
print(f"\neval with retrieval (k=1): accuracy {report.aggregates['acc']:.4f}")

baseline = run_rag_eval(queries, retriever, chunk_map.__getitem__, gen, k=0, dataset="demo")
print(f"direct answer baseline (k=0): accuracy {baseline.aggregates['acc']:.4f}")

with_r = [q["correct"] for q in report.queries]
without = [q["correct"] for q in baseline.queries]
b = sum(1 for x, y in zip(with_r, without) if x and not y)
c = sum(1 for x, y in zip(with_r, without) if y and not x)
a = sum(1 for x, y in zip(with_r, without) if x and y)
d = len(with_r) - a - b - c
result = mcnemar(PairedOutcomes(a, b, c, d))
print(f"\nMcNemar retrieval-vs-baseline: b={b} c={c} "
      f"statistic={result['statistic']:.4f} p={result['p_value']:.3g}")
