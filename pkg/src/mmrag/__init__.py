"""Mixed-modal retrieval-augmented generation toolkit.

Submodules: core (types, corpus store), chunker, gateway (embedding and
generation backends), index (multi-resolution dense retrieval), contrastive
(loss, gradients, trainer), datagen (QA synthesis), feedback (preference
building), evaluation (metrics and harness), cli.
"""

__version__ = "0.1.0"
