"""Simulated decoy-nudge experiments on carbon-offset choices with LLM agents."""

__version__ = "0.1.0"
