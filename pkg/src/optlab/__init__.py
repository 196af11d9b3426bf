"""Exact engine for a deterministic, non-causal operational theory."""

__version__ = "0.1.0"
