"""icmlab: a desk-scale lab for edge-mask-guided learned compression."""

__version__ = "0.1.0"
