"""Evidence-driven keyframe selection.

Exact conditional-information oracles on small discrete models, a
query-conditioned frame scoring network, multi-positive contrastive
training, and temporally-adaptive budgeted selection, sharing bit-exact
file formats for embeddings, annotations, and checkpoints.
"""

__version__ = "0.1.0"
