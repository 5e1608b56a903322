"""Compression fragility of classifiers: theory checks, attacks and consistency detectors."""

__version__ = "0.1.0"
