"""Multi-anchor active domain adaptation on synthetic per-pixel segmentation problems."""

__version__ = "0.1.0"
