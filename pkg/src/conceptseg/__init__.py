"""Unsupervised visual concept discovery.

Decomposes images into superpixel primitives, clusters primitive
embeddings into concepts via overclustering with spectral reassignment,
refines the concepts with a pseudo-label-trained per-pixel classifier,
and evaluates the result as unsupervised semantic segmentation.
"""

__version__ = "0.1.0"
