"""Hybrid mono-/cross-modal embedding retrieval and evaluation."""

__version__ = "0.1.0"
