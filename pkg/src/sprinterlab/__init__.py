"""Speculative decoding and sequential approximate verification on toy n-gram models."""

__version__ = "0.1.0"
