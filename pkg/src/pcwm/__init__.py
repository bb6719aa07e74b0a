"""Point-cloud watermarking: block-SVD embedding, attacks, metrics and a neural decoder."""

__version__ = "0.1.0"
