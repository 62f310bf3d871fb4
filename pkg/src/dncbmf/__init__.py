"""Doubly non-central beta matrix factorization."""

__version__ = "0.1.0"
