"""Adaptive adversarial factorization machines for feature-fair recommendation."""

__version__ = "0.1.0"
