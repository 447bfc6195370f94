import random

import pytest

from mmrag.core import ImageRef, MixedModalDoc, TextSegment

WORDS = (
    "ledger", "harbor", "signal", "meadow", "cobalt", "quartz", "onyx", "ember",
    "raven", "timber", "drift", "anchor", "prairie", "summit", "velvet", "cinder",
)


def random_text(rng: random.Random, n_tokens: int) -> str:
    return " ".join(rng.choice(WORDS) + str(rng.randint(0, 99)) for _ in range(n_tokens))


def random_doc(rng: random.Random, doc_id: str, max_tokens: int = 1000, max_images: int = 10) -> MixedModalDoc:
    """Random element sequence: text runs of 0-max_tokens tokens, 0-max_images images."""
    elements = []
    n_images = rng.randint(0, max_images)
    n_texts = rng.randint(0 if n_images else 1, 4)
    slots = ["text"] * n_texts + ["image"] * n_images
    rng.shuffle(slots)
    img = 0
    for slot in slots:
        if slot == "text":
            n = rng.randint(0, max_tokens // max(n_texts, 1))
            if n == 0:
                continue
            elements.append(TextSegment(text=random_text(rng, n)))
        else:
            img += 1
            elements.append(ImageRef(uri=f"img://{doc_id}/{img}.png"))
    if not elements:
        elements.append(TextSegment(text=random_text(rng, 3)))
    return MixedModalDoc(id=doc_id, elements=tuple(elements))


@pytest.fixture
def rng():
    return random.Random(20240817)
