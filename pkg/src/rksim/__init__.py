"""Deterministic trace-driven simulator for a replicated notebook-kernel GPU platform."""

__version__ = "0.1.0"
