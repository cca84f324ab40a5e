"""Streaming two-stage acoustic echo cancellation for full-duplex speech front ends."""

__version__ = "0.1.0"
