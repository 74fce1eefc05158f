"""Embedding-gated CNN regression with cross-domain relationship learning."""

__version__ = "0.1.0"
