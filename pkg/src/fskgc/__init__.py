"""Few-shot knowledge-graph completion with conjugate relation modeling."""

__version__ = "0.1.0"
