#!/usr/bin/env python3
"""Regenerate the shared golden-vector suite.

The golden file pins the reference embedder's exact float64 outputs (and
the scripted-fixture payload keys) for a spread of payloads, roles, and
dimensions. Both the in-process embedder tests and the stub service tests
compare against it value-for-value, which is what keeps the two
implementations bit-compatible. Regenerate only when the embedding
contract itself changes, and never casually.
"""

import json
import sys
from pathlib import Path

from mmrag.core import ImageRef, TextSegment, element_to_obj
from mmrag.gateway import DEFAULT_QUERY_INSTRUCTION, payload_key, reference_embed

CASES = [
    {
        "name": "plain-ascii-document",
        "elements": [TextSegment(text="The quick brown fox jumps over the lazy dog.")],
        "role": "document",
        "instruction": None,
        "dim": 64,
    },
    {
        "name": "punctuation-and-digits",
        "elements": [TextSegment(text="face-to-face! 42 items cost $3.50 each (net).")],
        "role": "document",
        "instruction": None,
        "dim": 64,
    },
    {
        "name": "unicode-mixed-scripts",
        "elements": [TextSegment(text="Crème brûlée 北京 2024 καλημέρα мир ☃ \U0001F680")],
        "role": "document",
        "instruction": None,
        "dim": 64,
    },
    {
        "name": "image-only",
        "elements": [ImageRef(uri="img://golden/a.png")],
        "role": "document",
        "instruction": None,
        "dim": 64,
    },
    {
        "name": "interleaved-text-images",
        "elements": [
            TextSegment(text="before the figure"),
            ImageRef(uri="img://golden/chart-1.png", alt="a chart"),
            TextSegment(text="between figures"),
            ImageRef(uri="img://golden/chart-2.png"),
            TextSegment(text="after the figures"),
        ],
        "role": "document",
        "instruction": None,
        "dim": 128,
    },
    {
        "name": "query-with-default-instruction",
        "elements": [TextSegment(text="what color is the sky on a clear day?")],
        "role": "query",
        "instruction": DEFAULT_QUERY_INSTRUCTION,
        "dim": 64,
    },
    {
        "name": "query-custom-instruction",
        "elements": [
            TextSegment(text="Which project does the chart describe?"),
            ImageRef(uri="img://golden/chart-1.png"),
        ],
        "role": "query",
        "instruction": "Find the document answering this question.",
        "dim": 512,
    },
    {
        "name": "repeated-tokens-cancellation-probe",
        "elements": [TextSegment(text="echo echo echo alpha beta alpha")],
        "role": "document",
        "instruction": None,
        "dim": 8,
    },
    {
        "name": "full-dimension-document",
        "elements": [
            TextSegment(text="Dense retrieval over interleaved corpora needs stable primitives."),
            ImageRef(uri="img://golden/full-dim.png"),
        ],
        "role": "document",
        "instruction": None,
        "dim": 2048,
    },
]


def main(out_path: str) -> None:
    golden = {"cases": []}
    for case in CASES:
        vec = reference_embed(case["elements"], case["role"], case["instruction"], case["dim"])
        golden["cases"].append(
            {
                "name": case["name"],
                "elements": [element_to_obj(e) for e in case["elements"]],
                "role": case["role"],
                "instruction": case["instruction"],
                "dim": case["dim"],
                "payload_key": payload_key(case["elements"]),
                "embedding": [float(v) for v in vec.values],
            }
        )
    Path(out_path).write_text(json.dumps(golden, ensure_ascii=False, indent=1) + "\n", "utf-8")
    print(f"wrote {len(golden['cases'])} golden cases to {out_path}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "golden/embedding_golden.json")
