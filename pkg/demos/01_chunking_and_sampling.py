#!/usr/bin/env python3
"""Walk through chunking a mixed-modal corpus and stratified sampling.

Builds the bundled synthetic corpus, segments every document into
token-capped chunks, shows how an image-bearing document keeps its image
attached to the chunk being filled, then draws a modality-stratified
sample and compares the modality distributions.
"""

from collections import Counter

from mmrag.chunker import ChunkerConfig, segment_document, stratified_sample, tokenize_text
from mmrag.demo import build_demo

bundle = build_demo(n_docs=200, seed=7)

print("tokenizer examples")
for text in ("an act of love", "face-to-face!", "crème brûlée 北京2024"):
    print(f"  {text!r} -> {tokenize_text(text)}")

cfg = ChunkerConfig(max_text_tokens=200)
chunks = []
for doc in bundle.docs:
    chunks.extend(segment_document(doc, cfg))
print(f"\n{len(bundle.docs)} documents -> {len(chunks)} chunks (cap {cfg.max_text_tokens} text tokens)")

long_doc = bundle.docs[0]  # every 10th doc overflows the cap
pieces = segment_document(long_doc, cfg)
print(f"\ndocument {long_doc.id} splits into {len(pieces)} chunks:")
for c in pieces:
    kinds = "+".join(type(e).__name__ for e in c.elements)
    print(f"  {c.id}: {c.text_token_count} tokens, elements {kinds}")

population = Counter(c.modality_profile.key() for c in chunks)
sample = stratified_sample(chunks, n=50, seed=13)
picked = Counter(c.modality_profile.key() for c in sample)
print("\nstratum                 population  sampled")
for key in sorted(population):
    print(f"  {str(key):22}  {population[key]:9}  {picked.get(key, 0):7}")
