"""Exact and message-passing inference on random factor graphs."""

__version__ = "0.1.0"
