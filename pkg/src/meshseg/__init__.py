"""Per-face semantic segmentation of textured triangle meshes.

The pipeline couples two per-face feature branches (hand-crafted shape
descriptors and raw texture pixels run through a small transformer) with a
cluster-batched two-stage transformer stack that alternates attention within
vertex clusters and attention across cluster summary tokens.
"""

__version__ = "0.1.0"
